"""Deterministic event simulation of managed applications on a heterogeneous CPU.

Each synthetic application carries a hidden behaviour model (an Amdahl-style
throughput law plus a per-core power law) that the resource manager can only
observe through windowed, optionally noisy measurements. The loop advances
continuously between discrete events (arrivals, window ticks, scripted
reconfigurations, completions), so per-application progress and energy
integrate exactly.

Policies:
  emapper          allocate by minimum summed energy-utility cost, learn
                   unknown applications online through staged exploration
  baseline_spread  every application gets all cores, time-multiplexed equally
  static_points    allocate from declared description files only, no learning
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO

import numpy as np

from . import allocator
from .errors import HetmapError, ParseError, ValidationError
from .explorer import (
    StageThresholds,
    fit_aux_model,
    fit_model,
    monomial_exponents,
    predicted_front,
    select_initial_probe,
    select_refinement_probe,
    stage_of,
    training_rows,
)
from .monitor import AppMonitor, DEFAULT_ALPHA, DEFAULT_WINDOW_MS
from .opoints import (
    Application,
    AppDescription,
    OperatingPoint,
    Stage,
    load_app_description,
    make_point,
    pareto_filter,
)
from .platform import Config, Platform, enumerate_configurations, footprint, validate_config

log = logging.getLogger("hetmap.simkernel")

POLICIES = ("emapper", "baseline_spread", "static_points")

# Throughput never collapses entirely under interference; keeps progress finite.
MIN_THROUGHPUT_FACTOR = 0.01


@dataclass(frozen=True)
class TrueBehavior:
    """Hidden ground truth of a synthetic application."""

    total_work: float
    parallel_fraction: float
    per_type_rate: tuple[float, ...]
    smt_factor: float
    static_power_per_core: tuple[float, ...]
    dynamic_power_per_core: tuple[float, ...]
    interference_penalty: float = 0.0

    def validate(self, platform: Platform) -> None:
        m = platform.num_types
        if self.total_work <= 0.0:
            raise ValidationError("total_work must be positive")
        if not 0.0 <= self.parallel_fraction <= 1.0:
            raise ValidationError("parallel_fraction must be in [0, 1]")
        if not 0.0 < self.smt_factor <= 1.0:
            raise ValidationError("smt_factor must be in (0, 1]")
        if self.interference_penalty < 0.0:
            raise ValidationError("interference_penalty must be >= 0")
        for name, vec in (
            ("per_type_rate", self.per_type_rate),
            ("static_power_per_core", self.static_power_per_core),
            ("dynamic_power_per_core", self.dynamic_power_per_core),
        ):
            if len(vec) != m:
                raise ValidationError(f"{name} must have one entry per core type ({m})")
            if any(v <= 0.0 for v in vec) and name == "per_type_rate":
                raise ValidationError(f"{name} entries must be positive")
            if any(v < 0.0 for v in vec):
                raise ValidationError(f"{name} entries must be non-negative")


def _perf(
    behavior: TrueBehavior,
    platform: Platform,
    cores: list[tuple[int, int, float]],
    threads: int | None,
) -> tuple[float, float]:
    """Throughput and attributed power on concrete cores.

    cores holds (type index, hardware threads available to the app on that
    core, time share of the core). threads caps how many thread slots the
    application occupies (None means all of them, i.e. a scalable app).
    """
    slots: list[tuple[float, int, int, int]] = []  # rate, core ordinal, type, slot
    for ci, (k, avail, share) in enumerate(cores):
        r = behavior.per_type_rate[k] * share
        for si in range(avail):
            rate = r if si == 0 else r * behavior.smt_factor
            slots.append((rate, ci, k, si))
    if not slots:
        return 0.0, 0.0
    slots.sort(key=lambda e: (-e[0], e[1], e[3]))
    usable = len(slots) if threads is None else max(1, min(threads, len(slots)))
    used = slots[:usable]
    cap = sum(e[0] for e in used)
    r_serial = used[0][0]
    f = behavior.parallel_fraction
    denom = (1.0 - f) / r_serial + f / cap
    ips = 1.0 / denom

    used_cores: dict[int, int] = {}
    for _r, ci, _k, _si in used:
        used_cores[ci] = used_cores.get(ci, 0) + 1
    per_type_used: dict[int, int] = {}
    for ci in used_cores:
        k = cores[ci][0]
        per_type_used[k] = per_type_used.get(k, 0) + 1
    total_used = len(used_cores)
    if total_used > 0 and behavior.interference_penalty > 0.0:
        penalty = (
            behavior.interference_penalty
            * (total_used - max(per_type_used.values()))
            / total_used
        )
        ips *= max(1.0 - penalty, MIN_THROUGHPUT_FACTOR)

    tau_p = (f / cap) / denom
    tau_s = 1.0 - tau_p
    smt = behavior.smt_factor
    power = 0.0
    for ci, (k, _avail, share) in enumerate(cores):
        power += behavior.static_power_per_core[k] * share
        j_used = used_cores.get(ci, 0)
        if j_used > 0:
            h = platform.core_types[k].hw_threads
            act = (1.0 + smt * (j_used - 1)) / (1.0 + smt * (h - 1))
            power += tau_p * behavior.dynamic_power_per_core[k] * act * share
    # The sequential phase keeps the fastest core busy with one thread.
    k0, c0 = used[0][2], used[0][1]
    h0 = platform.core_types[k0].hw_threads
    act1 = 1.0 / (1.0 + smt * (h0 - 1))
    power += tau_s * behavior.dynamic_power_per_core[k0] * act1 * cores[c0][2]
    return ips, power


def _cores_of_config(cfg: Config, platform: Platform) -> list[tuple[int, int, float]]:
    cores = []
    for (k, j), c in zip(platform.dim_buckets(), cfg):
        cores.extend([(k, j, 1.0)] * c)
    return cores


def ground_truth(
    behavior: TrueBehavior,
    cfg: Config,
    platform: Platform,
    threads: int | None = None,
) -> tuple[float, float]:
    """Hidden (utility, power) of a configuration with exclusive core ownership."""
    validate_config(cfg, platform)
    return _perf(behavior, platform, _cores_of_config(cfg, platform), threads)


def true_points(
    behavior: TrueBehavior,
    platform: Platform,
    threads: int | None = None,
    cap: int | None = None,
) -> list[OperatingPoint]:
    """Evaluate the hidden model on the whole configuration space."""
    pts = []
    for cfg in enumerate_configurations(platform, cap):
        ips, power = ground_truth(behavior, cfg, platform, threads)
        if ips > 0.0 and power > 0.0:
            pts.append(make_point(cfg, platform, ips, power, "declared"))
    return pts


def true_front(
    behavior: TrueBehavior,
    platform: Platform,
    threads: int | None = None,
    cap: int | None = None,
) -> list[OperatingPoint]:
    return pareto_filter(true_points(behavior, platform, threads, cap))


def declared_description(
    app_id: str,
    behavior: TrueBehavior,
    platform: Platform,
    threads: int | None = None,
    utility_units: str = "work/s",
) -> AppDescription:
    """Description file content a design-time sweep of the model would produce."""
    return AppDescription(
        app_id=app_id,
        utility_units=utility_units,
        points=tuple(true_front(behavior, platform, threads)),
    )


@dataclass(frozen=True)
class PolicyOptions:
    noise_sigma: float = 0.05
    idle_factor: float = 0.1
    idle_unit_power: float = 1.0
    reconfig_cost_windows: float = 1.0
    ema_alpha: float = DEFAULT_ALPHA
    regression_degree: int = 2
    exploration_cap: int | None = None
    max_sim_ms: float = 600_000.0


@dataclass(frozen=True)
class AppSpec:
    app_id: str
    arrival_ms: float
    behavior: TrueBehavior
    app_type: str = "scalable"
    threads: int | None = None
    description_file: Path | None = None
    priority: float = 1.0
    reconfig_script: tuple[tuple[float, Config], ...] = ()

    def __post_init__(self):
        if self.app_type not in ("scalable", "static"):
            raise ValidationError(f"unknown app type {self.app_type!r}")
        if self.app_type == "static" and (self.threads is None or self.threads < 1):
            raise ValidationError("static apps need a positive thread count")
        if self.arrival_ms < 0.0:
            raise ValidationError("arrival_ms must be >= 0")

    @property
    def thread_cap(self) -> int | None:
        return self.threads if self.app_type == "static" else None


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    window_ms: float
    apps: tuple[AppSpec, ...]
    policy_options: PolicyOptions = PolicyOptions()
    thresholds: StageThresholds = StageThresholds()


def load_scenario(path: str | Path, platform: Platform) -> Scenario:
    """Load and validate a scenario file (see README for the schema)."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ParseError(f"cannot read scenario file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"scenario file {path} is not valid JSON: {exc}") from exc
    try:
        apps = []
        for entry in raw["apps"]:
            b = entry["behavior"]
            behavior = TrueBehavior(
                total_work=float(b["total_work"]),
                parallel_fraction=float(b["parallel_fraction"]),
                per_type_rate=tuple(float(x) for x in b["per_type_rate"]),
                smt_factor=float(b["smt_factor"]),
                static_power_per_core=tuple(float(x) for x in b["static_power_per_core"]),
                dynamic_power_per_core=tuple(
                    float(x) for x in b["dynamic_power_per_core"]
                ),
                interference_penalty=float(b.get("interference_penalty", 0.0)),
            )
            desc = entry.get("description_file")
            script = tuple(
                (float(s["at_ms"]), tuple(int(x) for x in s["config"]))
                for s in entry.get("reconfig_script", [])
            )
            apps.append(
                AppSpec(
                    app_id=str(entry["app_id"]),
                    arrival_ms=float(entry.get("arrival_ms", 0.0)),
                    behavior=behavior,
                    app_type=str(entry.get("type", "scalable")),
                    threads=int(entry["threads"]) if "threads" in entry else None,
                    description_file=(path.parent / desc) if desc else None,
                    priority=float(entry.get("priority", 1.0)),
                    reconfig_script=script,
                )
            )
        po = raw.get("policy_options", {})
        cap = po.get("exploration_cap")
        options = PolicyOptions(
            noise_sigma=float(po.get("noise_sigma", 0.05)),
            idle_factor=float(po.get("idle_factor", 0.1)),
            idle_unit_power=float(po.get("idle_unit_power", 1.0)),
            reconfig_cost_windows=float(po.get("reconfig_cost_windows", 1.0)),
            ema_alpha=float(po.get("ema_alpha", DEFAULT_ALPHA)),
            regression_degree=int(po.get("regression_degree", 2)),
            exploration_cap=int(cap) if cap is not None else None,
            max_sim_ms=float(po.get("max_sim_ms", 600_000.0)),
        )
        th = raw.get("thresholds", {})
        thresholds = StageThresholds(
            initial_exit=int(th.get("initial_exit", 6)),
            stable_points=int(th.get("stable_points", 25)),
            stable_samples=int(th.get("stable_samples", 20)),
            refinement_batch=int(th.get("refinement_batch", 3)),
            stable_reassess=int(th.get("stable_reassess", 100)),
        )
        scenario = Scenario(
            name=str(raw.get("name", path.stem)),
            seed=int(raw.get("seed", 0)),
            window_ms=float(raw.get("window_ms", DEFAULT_WINDOW_MS)),
            apps=tuple(apps),
            policy_options=options,
            thresholds=thresholds,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"scenario file {path} has a malformed entry: {exc}") from exc
    ids = [a.app_id for a in scenario.apps]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"duplicate app ids in scenario: {ids}")
    if scenario.window_ms <= 0.0:
        raise ValidationError("window_ms must be positive")
    for app in scenario.apps:
        app.behavior.validate(platform)
        for _t, cfg in app.reconfig_script:
            validate_config(cfg, platform)
    return scenario


@dataclass
class AppReport:
    arrival_ms: float
    completion_ms: float
    energy_j: float
    configs_used: int
    windows_accepted: int
    windows_discarded: int
    reconfigurations: int
    final_stage: str


@dataclass
class Report:
    policy: str
    scenario: str
    seed_entropy: tuple[int, ...]
    makespan_ms: float
    total_energy_j: float
    idle_energy_j: float
    per_app: dict[str, AppReport]

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "scenario": self.scenario,
            "seed_entropy": list(self.seed_entropy),
            "makespan_ms": self.makespan_ms,
            "total_energy_j": self.total_energy_j,
            "idle_energy_j": self.idle_energy_j,
            "per_app": {
                app_id: {
                    "arrival_ms": r.arrival_ms,
                    "completion_time_ms": r.completion_ms,
                    "energy_j": r.energy_j,
                    "configs_used": r.configs_used,
                    "windows_accepted": r.windows_accepted,
                    "windows_discarded": r.windows_discarded,
                    "reconfigurations": r.reconfigurations,
                    "final_stage": r.final_stage,
                }
                for app_id, r in sorted(self.per_app.items())
            },
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def write_csv(self, path: str | Path) -> None:
        lines = [
            "app_id,arrival_ms,completion_time_ms,energy_j,configs_used,"
            "windows_accepted,windows_discarded,reconfigurations,final_stage"
        ]
        for app_id, r in sorted(self.per_app.items()):
            lines.append(
                f"{app_id},{r.arrival_ms},{r.completion_ms},{r.energy_j},"
                f"{r.configs_used},{r.windows_accepted},{r.windows_discarded},"
                f"{r.reconfigurations},{r.final_stage}"
            )
        lines.append(
            f"TOTAL,0.0,{self.makespan_ms},{self.total_energy_j},,,,,"
        )
        Path(path).write_text("\n".join(lines) + "\n")


class _AppRuntime:
    """Mutable per-application simulation state."""

    def __init__(
        self,
        spec: AppSpec,
        platform: Platform,
        options: PolicyOptions,
        rng: np.random.Generator,
        declared: AppDescription | None,
        exploring: bool,
    ):
        self.spec = spec
        self.platform = platform
        self.declared = declared
        self.exploring = exploring
        self.monitor = AppMonitor(
            alpha=options.ema_alpha,
            noise_sigma=options.noise_sigma,
            rng=rng if options.noise_sigma > 0.0 else None,
        )
        self.application = Application(
            app_id=spec.app_id,
            description=declared,
            stage=Stage.STABLE if declared is not None else Stage.INITIAL,
            history=self.monitor.history,
            priority=spec.priority,
        )
        self.remaining = spec.behavior.total_work
        self.energy_j = 0.0
        self.active_cfg: Config | None = None
        self.active_cores: frozenset[allocator.CoreSlot] = frozenset()
        self.allocated_point: OperatingPoint | None = None
        self.allocated_cores: frozenset[allocator.CoreSlot] = frozenset()
        self.frozen_until = 0.0
        self.completion_ms: float | None = None
        self.reconfig_count = 0
        self.configs_used: set[Config] = set()
        self.ips_eff = 0.0
        self.power_attr = 0.0
        self.shared = False
        self.probe_cfg: Config | None = None
        self.probe_accept_left = 0
        self.probes_completed = 0
        self.model_main = None
        self.model_aux = None
        self.script_idx = 0

    @property
    def app_id(self) -> str:
        return self.spec.app_id


class _Simulation:
    def __init__(
        self,
        scenario: Scenario,
        platform: Platform,
        policy: str,
        extra_entropy: tuple[int, ...] = (),
        learn_state: dict | None = None,
        monitor_trace: IO[str] | None = None,
        explore_trace: IO[str] | None = None,
    ):
        if policy not in POLICIES:
            raise ValidationError(f"unknown policy {policy!r}, expected one of {POLICIES}")
        self.scenario = scenario
        self.platform = platform
        self.policy = policy
        self.options = scenario.policy_options
        self.thresholds = scenario.thresholds
        self.window_ms = scenario.window_ms
        self.entropy = (scenario.seed,) + tuple(extra_entropy)
        self.learn_state = learn_state
        self.monitor_trace = monitor_trace
        self.explore_trace = explore_trace
        self.t = 0.0
        self.window_index = 0
        self.idle_energy_j = 0.0
        self.idle_power_w = 0.0
        self.realloc_needed = False
        self.apps: dict[str, _AppRuntime] = {}
        self.active: dict[str, _AppRuntime] = {}
        self.arrivals = sorted(scenario.apps, key=lambda a: (a.arrival_ms, a.app_id))
        self.arrival_idx = 0
        self.all_configs = enumerate_configurations(platform, self.options.exploration_cap)
        self.full_config = self._full_platform_config()
        self._monomials_needed = len(
            monomial_exponents(platform.num_dims, self.options.regression_degree)
        )
        ss = np.random.SeedSequence(self.entropy)
        children = ss.spawn(len(scenario.apps))
        self._rngs = {
            spec.app_id: np.random.default_rng(child)
            for spec, child in zip(scenario.apps, children)
        }
        if self.monitor_trace is not None:
            self.monitor_trace.write(
                "time_ms,app_id,config,ips_raw,ips_ema,power_raw,power_ema,discarded\n"
            )
        if self.explore_trace is not None:
            self.explore_trace.write(
                "round,app_id,stage,probe_config,score,model_mape_ips,model_mape_power\n"
            )

    # ----- setup helpers -------------------------------------------------

    def _full_platform_config(self) -> Config:
        cfg = [0] * self.platform.num_dims
        for d, (k, j) in enumerate(self.platform.dim_buckets()):
            if j == self.platform.core_types[k].hw_threads:
                cfg[d] = self.platform.core_types[k].count
        return tuple(cfg)

    def _make_runtime(self, spec: AppSpec) -> _AppRuntime:
        declared = None
        if spec.description_file is not None:
            declared = load_app_description(spec.description_file, self.platform)
        exploring = (
            self.policy == "emapper" and declared is None
        )
        rt = _AppRuntime(
            spec,
            self.platform,
            self.options,
            self._rngs[spec.app_id],
            declared,
            exploring,
        )
        if self.learn_state is not None and spec.app_id in self.learn_state:
            for row in self.learn_state[spec.app_id].get("configs", []):
                rt.monitor.prime(
                    tuple(int(x) for x in row["config"]),
                    float(row["ips_ema"]),
                    float(row["power_ema"]),
                    int(row["count"]),
                )
            self._refit(rt)
        if rt.exploring:
            rt.application.advance_stage(stage_of(rt.application, self.thresholds))
            if rt.application.stage == Stage.STABLE:
                rt.exploring = False
        return rt

    # ----- physics -------------------------------------------------------

    def _recompute_rates(self) -> None:
        core_users: dict[tuple[str, int], int] = {}
        core_threads: dict[tuple[str, int], int] = {}
        for rt in self.active.values():
            for type_id, idx, threads in rt.active_cores:
                core_users[(type_id, idx)] = core_users.get((type_id, idx), 0) + 1
                core_threads[(type_id, idx)] = max(
                    core_threads.get((type_id, idx), 0), threads
                )
        type_index = {ct.id: k for k, ct in enumerate(self.platform.core_types)}
        for app_id in sorted(self.active):
            rt = self.active[app_id]
            cores = []
            shared = False
            for type_id, idx, threads in sorted(rt.active_cores):
                n = core_users[(type_id, idx)]
                if n > 1:
                    shared = True
                cores.append((type_index[type_id], threads, 1.0 / n))
            rt.shared = shared
            rt.ips_eff, rt.power_attr = _perf(
                rt.spec.behavior, self.platform, cores, rt.spec.thread_cap
            )
        idle = 0.0
        for ct in self.platform.core_types:
            used_of_type = sum(1 for (tid, _i) in core_users if tid == ct.id)
            idle += (
                (ct.count - used_of_type)
                * self.options.idle_factor
                * self.options.idle_unit_power
                * ct.power_coefficient
            )
        self.idle_power_w = idle
        if log.isEnabledFor(logging.DEBUG):
            self._assert_capacity(core_users)

    def _assert_capacity(self, core_users: dict[tuple[str, int], int]) -> None:
        shared_cores = {c for c, n in core_users.items() if n > 1}
        for app_id, rt in self.active.items():
            if rt.shared:
                continue
            for type_id, idx, _threads in rt.active_cores:
                if (type_id, idx) in shared_cores:
                    raise HetmapError(
                        f"capacity invariant violated: unshared app {app_id} on "
                        f"shared core {(type_id, idx)}"
                    )

    def _integrate(self, t0: float, t1: float) -> None:
        if t1 <= t0:
            return
        dt_s = (t1 - t0) / 1000.0
        for app_id in sorted(self.active):
            rt = self.active[app_id]
            active_ms = max(0.0, t1 - max(t0, rt.frozen_until))
            rt.remaining -= rt.ips_eff * (active_ms / 1000.0)
            rt.energy_j += rt.power_attr * dt_s
        self.idle_energy_j += self.idle_power_w * dt_s

    def _completion_time(self, rt: _AppRuntime) -> float:
        if rt.ips_eff <= 0.0:
            return math.inf
        start = max(self.t, rt.frozen_until)
        return start + (rt.remaining / rt.ips_eff) * 1000.0

    # ----- reconfiguration and allocation --------------------------------

    def _activate(self, rt: _AppRuntime, cfg: Config, cores: frozenset) -> None:
        """Initial configuration at registration: no discards, no cost."""
        rt.active_cfg = cfg
        rt.active_cores = cores
        rt.configs_used.add(cfg)

    def _reconfigure(self, rt: _AppRuntime, cfg: Config, cores: frozenset) -> None:
        if rt.active_cfg is None:
            self._activate(rt, cfg, cores)
            return
        if cfg == rt.active_cfg:
            rt.active_cores = cores  # silent migration, same shape
            return
        rt.active_cfg = cfg
        rt.active_cores = cores
        rt.configs_used.add(cfg)
        rt.reconfig_count += 1
        rt.monitor.on_reconfigure()
        rt.frozen_until = max(
            rt.frozen_until,
            self.t + self.options.reconfig_cost_windows * self.window_ms,
        )

    def _candidate_points(self, rt: _AppRuntime) -> tuple[OperatingPoint, ...]:
        if rt.declared is not None:
            return rt.declared.points
        if self.policy == "static_points":
            return ()
        measured = [
            make_point(cfg, self.platform, st.ema_ips.value, st.ema_power.value, "measured")
            for cfg, st in sorted(rt.monitor.history.items())
            if st.count > 0 and st.ema_ips.value > 0.0 and st.ema_power.value > 0.0
        ]
        if rt.model_main is not None:
            return tuple(
                predicted_front(
                    rt.model_main,
                    self.platform,
                    measured,
                    cap=self.options.exploration_cap,
                )
            )
        return tuple(pareto_filter(measured))

    def _reallocate(self) -> None:
        if self.policy == "baseline_spread" or not self.active:
            self._recompute_rates()
            return
        req = allocator.AllocationRequest(
            apps=tuple(
                allocator.AppCandidates(
                    app_id=app_id,
                    points=self._candidate_points(self.active[app_id]),
                    priority=self.active[app_id].spec.priority,
                )
                for app_id in sorted(self.active)
            ),
            platform=self.platform,
        )
        alloc = allocator.allocate(req)
        occupied: set[tuple[str, int]] = set()
        for app_id in sorted(self.active):
            rt = self.active[app_id]
            pt = alloc.choices[app_id]
            cores = alloc.core_assignment[app_id]
            rt.allocated_point = pt
            rt.allocated_cores = cores
            if not rt.exploring or rt.active_cfg is None:
                self._reconfigure(rt, pt.config, cores)
                occupied.update((c[0], c[1]) for c in cores)
        # Exploring apps keep probing unless their cores now collide.
        for app_id in sorted(self.active):
            rt = self.active[app_id]
            if not rt.exploring or rt.active_cfg is None:
                continue
            mine = {(c[0], c[1]) for c in rt.active_cores}
            if mine & occupied:
                rt.probe_cfg = None
                self._reconfigure(rt, rt.allocated_point.config, rt.allocated_cores)
                occupied.update({(c[0], c[1]) for c in rt.allocated_cores})
            else:
                occupied.update(mine)
        self._recompute_rates()

    def _free_capacity(self, rt: _AppRuntime) -> tuple[np.ndarray, set[tuple[str, int]]]:
        """Per-type core budget and occupied core set, excluding rt itself."""
        counts = np.array(self.platform.type_counts(), dtype=int)
        occupied: set[tuple[str, int]] = set()
        type_index = {ct.id: k for k, ct in enumerate(self.platform.core_types)}
        used = np.zeros(len(counts), dtype=int)
        for app_id in sorted(self.active):
            other = self.active[app_id]
            if other is rt:
                continue
            for type_id, idx, _threads in other.active_cores:
                if (type_id, idx) not in occupied:
                    occupied.add((type_id, idx))
                    used[type_index[type_id]] += 1
        return counts - used, occupied

    def _probe_cores(
        self, cfg: Config, occupied: set[tuple[str, int]]
    ) -> frozenset[allocator.CoreSlot]:
        slots: list[allocator.CoreSlot] = []
        taken = set(occupied)
        for d, need in enumerate(cfg):
            if need == 0:
                continue
            k, j = self.platform.dim_buckets()[d]
            ct = self.platform.core_types[k]
            free = [i for i in range(ct.count) if (ct.id, i) not in taken]
            for i in free[:need]:
                taken.add((ct.id, i))
                slots.append((ct.id, i, j))
        return frozenset(slots)

    # ----- exploration ----------------------------------------------------

    def _refit(self, rt: _AppRuntime) -> None:
        rows = training_rows(rt.monitor.history)
        if len(rows) < self._monomials_needed:
            return
        degree = self.options.regression_degree
        rt.model_main = fit_model(rows, self.platform.num_dims, degree)
        rt.model_aux = fit_aux_model(rows, self.platform.num_dims, degree)

    def _trace_probe(self, rt: _AppRuntime, probe: Config, score: float) -> None:
        if self.explore_trace is None:
            return
        mape_i = mape_p = ""
        if rt.model_main is not None:
            rows = training_rows(rt.monitor.history)
            cfgs = [r[0] for r in rows]
            pred_i, pred_p = rt.model_main.predict_many(cfgs)
            act_i = np.array([r[1] for r in rows])
            act_p = np.array([r[2] for r in rows])
            ok_i = act_i != 0.0
            ok_p = act_p != 0.0
            if ok_i.any():
                mape_i = f"{np.mean(np.abs(pred_i[ok_i] - act_i[ok_i]) / np.abs(act_i[ok_i])) * 100.0:.4f}"
            if ok_p.any():
                mape_p = f"{np.mean(np.abs(pred_p[ok_p] - act_p[ok_p]) / np.abs(act_p[ok_p])) * 100.0:.4f}"
        cfg_s = "|".join(str(x) for x in probe)
        score_s = f"{score:.6g}" if score == score else ""
        self.explore_trace.write(
            f"{rt.probes_completed + 1},{rt.app_id},{rt.application.stage.label},"
            f"{cfg_s},{score_s},{mape_i},{mape_p}\n"
        )

    def _select_and_start_probe(self, rt: _AppRuntime) -> None:
        budget, occupied = self._free_capacity(rt)
        stats = rt.monitor.history
        candidates = [
            cfg
            for cfg in self.all_configs
            if (
                stats.get(cfg) is None
                or stats[cfg].count < self.thresholds.stable_samples
            )
            and all(f <= b for f, b in zip(footprint(cfg, self.platform), budget))
        ]
        if not candidates:
            # Exploration pauses: fall back to the allocated operating point.
            if (
                rt.allocated_point is not None
                and rt.active_cfg != rt.allocated_point.config
            ):
                self._reconfigure(rt, rt.allocated_point.config, rt.allocated_cores)
            return
        measured = [cfg for cfg, st in stats.items() if st.count > 0]
        score = float("nan")
        if rt.application.stage == Stage.INITIAL or rt.model_main is None:
            probe = select_initial_probe(measured, candidates)
        else:
            ips_scale, power_scale = rt.monitor.max_observed()
            probe = select_refinement_probe(
                rt.model_main, rt.model_aux, candidates, ips_scale, power_scale
            )
        cores = self._probe_cores(probe, occupied)
        rt.probe_cfg = probe
        rt.probe_accept_left = self.thresholds.stable_samples
        self._trace_probe(rt, probe, score)
        self._reconfigure(rt, probe, cores)

    def _end_exploration(self, rt: _AppRuntime) -> None:
        rt.exploring = False
        rt.probe_cfg = None
        self._refit(rt)
        self.realloc_needed = True

    def _explore_step(self, rt: _AppRuntime, accepted: bool) -> None:
        if accepted:
            rt.application.advance_stage(stage_of(rt.application, self.thresholds))
            if rt.application.stage == Stage.STABLE:
                self._end_exploration(rt)
                return
            if rt.probe_cfg is not None and rt.active_cfg == rt.probe_cfg:
                rt.probe_accept_left -= 1
                if rt.probe_accept_left <= 0:
                    rt.probes_completed += 1
                    rt.probe_cfg = None
                    self._refit(rt)
                    if rt.probes_completed % self.thresholds.refinement_batch == 0:
                        self.realloc_needed = True
                        return
        if rt.probe_cfg is None:
            self._select_and_start_probe(rt)

    # ----- event handling --------------------------------------------------

    def _on_window(self, t: float) -> None:
        self.window_index += 1
        for app_id in sorted(self.active):
            rt = self.active[app_id]
            if t - rt.spec.arrival_ms < self.window_ms - 1e-9:
                continue
            if rt.shared or rt.active_cfg is None:
                continue  # co-allocated apps are not monitored
            truth_ips, truth_pow = ground_truth(
                rt.spec.behavior, rt.active_cfg, self.platform, rt.spec.thread_cap
            )
            m = rt.monitor.sample_window(
                rt.active_cfg, truth_ips, truth_pow, t, self.window_ms
            )
            if self.monitor_trace is not None:
                st = rt.monitor.history.get(rt.active_cfg)
                cfg_s = "|".join(str(x) for x in rt.active_cfg)
                ema_i = st.ema_ips.value if st is not None and st.count else ""
                ema_p = st.ema_power.value if st is not None and st.count else ""
                self.monitor_trace.write(
                    f"{t},{app_id},{cfg_s},{m.ips},{ema_i},{m.power},{ema_p},"
                    f"{int(m.discarded)}\n"
                )
            if rt.exploring:
                self._explore_step(rt, accepted=not m.discarded)
        if (
            self.policy != "baseline_spread"
            and self.window_index % self.thresholds.stable_reassess == 0
        ):
            self.realloc_needed = True

    def _on_arrival(self, spec: AppSpec) -> None:
        rt = self._make_runtime(spec)
        self.apps[spec.app_id] = rt
        self.active[spec.app_id] = rt
        if self.policy == "baseline_spread":
            cores = self._probe_cores(self.full_config, set())
            self._activate(rt, self.full_config, cores)
            self._recompute_rates()
        else:
            self.realloc_needed = True

    def _on_completion(self, rt: _AppRuntime) -> None:
        rt.remaining = 0.0
        rt.completion_ms = self.t
        del self.active[rt.app_id]
        rt.active_cores = frozenset()
        if self.policy == "baseline_spread":
            self._recompute_rates()
        else:
            self.realloc_needed = True

    def _run_scripts(self, t: float) -> None:
        for app_id in sorted(self.active):
            rt = self.active[app_id]
            while (
                rt.script_idx < len(rt.spec.reconfig_script)
                and rt.spec.reconfig_script[rt.script_idx][0] <= t + 1e-9
            ):
                _at, cfg = rt.spec.reconfig_script[rt.script_idx]
                rt.script_idx += 1
                _budget, occupied = self._free_capacity(rt)
                cores = self._probe_cores(cfg, occupied)
                self._reconfigure(rt, cfg, cores)
        self._recompute_rates()

    # ----- main loop -------------------------------------------------------

    def _next_script_time(self) -> float:
        t = math.inf
        for rt in self.active.values():
            if rt.script_idx < len(rt.spec.reconfig_script):
                t = min(t, rt.spec.reconfig_script[rt.script_idx][0])
        return t

    def run(self) -> Report:
        windows_on = self.policy != "baseline_spread"
        while self.arrival_idx < len(self.arrivals) or self.active:
            t_arrival = (
                self.arrivals[self.arrival_idx].arrival_ms
                if self.arrival_idx < len(self.arrivals)
                else math.inf
            )
            t_window = math.inf
            if windows_on and self.active:
                t_window = (math.floor(self.t / self.window_ms + 1e-9) + 1) * self.window_ms
            t_script = self._next_script_time()
            t_done = math.inf
            for app_id in sorted(self.active):
                t_done = min(t_done, self._completion_time(self.active[app_id]))
            t_next = min(t_arrival, t_window, t_script, t_done)
            if not math.isfinite(t_next):
                raise HetmapError("simulation stalled: no progress and no events")
            if t_next > self.options.max_sim_ms:
                raise HetmapError(
                    f"simulation exceeded max_sim_ms={self.options.max_sim_ms}"
                )
            self._integrate(self.t, t_next)
            self.t = t_next

            # Completions first, then arrivals, then the window tick, then scripts.
            for app_id in sorted(self.active):
                rt = self.active[app_id]
                done = rt.remaining <= rt.spec.behavior.total_work * 1e-12
                done = done or self._completion_time(rt) <= self.t + 1e-6
                if done:
                    self._on_completion(rt)
            while (
                self.arrival_idx < len(self.arrivals)
                and self.arrivals[self.arrival_idx].arrival_ms <= self.t + 1e-9
            ):
                self._on_arrival(self.arrivals[self.arrival_idx])
                self.arrival_idx += 1
            if self.realloc_needed:
                self.realloc_needed = False
                self._reallocate()
            if windows_on and self.active and math.isclose(
                self.t, t_window, rel_tol=0.0, abs_tol=1e-9
            ):
                self._on_window(self.t)
                if self.realloc_needed:
                    self.realloc_needed = False
                    self._reallocate()
            if math.isfinite(t_script) and self.t + 1e-9 >= t_script and self.active:
                self._run_scripts(self.t)

        if self.learn_state is not None:
            for app_id, rt in sorted(self.apps.items()):
                if rt.declared is None and self.policy == "emapper":
                    self.learn_state[app_id] = {
                        "configs": [
                            {
                                "config": list(cfg),
                                "ips_ema": st.ema_ips.value,
                                "power_ema": st.ema_power.value,
                                "count": st.count,
                            }
                            for cfg, st in sorted(rt.monitor.history.items())
                            if st.count > 0
                        ]
                    }

        makespan = max(
            ((rt.completion_ms or 0.0) for rt in self.apps.values()), default=0.0
        )
        total = self.idle_energy_j + sum(rt.energy_j for rt in self.apps.values())
        per_app = {
            app_id: AppReport(
                arrival_ms=rt.spec.arrival_ms,
                completion_ms=rt.completion_ms if rt.completion_ms is not None else -1.0,
                energy_j=rt.energy_j,
                configs_used=len(rt.configs_used),
                windows_accepted=rt.monitor.windows_accepted,
                windows_discarded=rt.monitor.windows_discarded,
                reconfigurations=rt.reconfig_count,
                final_stage=rt.application.stage.label,
            )
            for app_id, rt in self.apps.items()
        }
        return Report(
            policy=self.policy,
            scenario=self.scenario.name,
            seed_entropy=self.entropy,
            makespan_ms=makespan,
            total_energy_j=total,
            idle_energy_j=self.idle_energy_j,
            per_app=per_app,
        )


def run_scenario(
    scenario: Scenario,
    platform: Platform,
    policy: str,
    extra_entropy: tuple[int, ...] = (),
    learn_state: dict | None = None,
    monitor_trace: IO[str] | None = None,
    explore_trace: IO[str] | None = None,
) -> Report:
    """Simulate one scenario under one policy; deterministic in all arguments."""
    sim = _Simulation(
        scenario,
        platform,
        policy,
        extra_entropy=extra_entropy,
        learn_state=learn_state,
        monitor_trace=monitor_trace,
        explore_trace=explore_trace,
    )
    return sim.run()
