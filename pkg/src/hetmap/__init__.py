"""Energy-aware operating-point allocation for heterogeneous processors.

Library layout:
  platform   core types, configuration vectors, footprints
  opoints    operating points, descriptions, Pareto machinery
  allocator  knapsack-style point selection with an exact oracle
  monitor    EMA smoothing, energy attribution, windowed sampling
  explorer   staged online exploration with polynomial surrogates
  metrics    MAPE, IGD, common-operating-point ratio
  simkernel  deterministic event simulator and policies
  cli        command-line interface (hetmap run|explore|eval-regression|compare)
"""

from .allocator import (
    Allocation,
    AllocationRequest,
    AppCandidates,
    allocate,
    allocate_exact,
    assign_cores,
    coallocate_fallback,
)
from .explorer import (
    PolyModel,
    StageThresholds,
    fit_aux_model,
    fit_model,
    predicted_front,
    select_initial_probe,
    select_refinement_probe,
    stage_of,
)
from .metrics import FrontComparison, common_ratio, igd, mape
from .monitor import (
    AppMonitor,
    EmaState,
    EnergySplit,
    Measurement,
    attribute_energy,
    ema_update,
)
from .opoints import (
    AppDescription,
    Application,
    OperatingPoint,
    Stage,
    dominates,
    energy_utility_cost,
    load_app_description,
    make_point,
    pareto_filter,
    save_app_description,
)
from .platform import (
    Config,
    CoreType,
    Platform,
    enumerate_configurations,
    footprint,
    load_platform,
)
from .simkernel import (
    POLICIES,
    PolicyOptions,
    Report,
    Scenario,
    TrueBehavior,
    declared_description,
    ground_truth,
    load_scenario,
    run_scenario,
    true_front,
)

__version__ = "0.1.0"
