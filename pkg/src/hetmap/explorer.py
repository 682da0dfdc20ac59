"""Online learning of operating points: surrogate regression and probe selection.

Two polynomial surrogates are kept per application, both mapping the
configuration vector to (IPS, power): the main model fits the measured data
alone, the auxiliary model additionally anchors the all-zero configuration at
zero output. Probe selection uses configuration-space distance while data is
scarce and the main/auxiliary discrepancy once both models can be fitted.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import UnderDeterminedError, ValidationError
from .monitor import ConfigStats
from .opoints import Application, OperatingPoint, Stage, make_point, pareto_filter
from .platform import Config, Platform, enumerate_configurations

DEFAULT_DEGREE = 2
REL_EPS = 1e-9


@dataclass(frozen=True)
class StageThresholds:
    initial_exit: int = 6
    stable_points: int = 25
    stable_samples: int = 20
    refinement_batch: int = 3
    stable_reassess: int = 100

    def __post_init__(self):
        for name in (
            "initial_exit",
            "stable_points",
            "stable_samples",
            "refinement_batch",
            "stable_reassess",
        ):
            if getattr(self, name) < 1:
                raise ValidationError(f"threshold {name} must be positive")
        if self.initial_exit >= self.stable_points:
            raise ValidationError("initial_exit must be below stable_points")


def stage_of(app: Application, thresholds: StageThresholds) -> Stage:
    """Maturity of an application's measurements per the staged thresholds."""
    counts = [st.count for st in app.history.values() if st.count > 0]
    measured = len(counts)
    if measured < thresholds.initial_exit:
        return Stage.INITIAL
    full = sum(1 for c in counts if c >= thresholds.stable_samples)
    if full >= thresholds.stable_points:
        return Stage.STABLE
    return Stage.REFINEMENT


def monomial_exponents(dims: int, degree: int) -> list[tuple[int, ...]]:
    """Exponent vectors of all monomials up to the given total degree.

    Ordered by total degree, then by the combination order of the variables,
    which is deterministic; the constant term comes first.
    """
    exps: list[tuple[int, ...]] = []
    for total in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(dims), total):
            e = [0] * dims
            for i in combo:
                e[i] += 1
            exps.append(tuple(e))
    return exps


def _design_matrix(configs: Sequence[Config], exps: Sequence[tuple[int, ...]]) -> np.ndarray:
    x = np.asarray(configs, dtype=float)
    e = np.asarray(exps, dtype=float)
    # (n, 1, d) ** (1, p, d) -> product over d gives the monomial values
    return np.prod(np.power(x[:, None, :], e[None, :, :]), axis=2)


@dataclass(frozen=True, eq=False)
class PolyModel:
    dims: int
    degree: int
    coef_ips: np.ndarray
    coef_power: np.ndarray
    training_count: int

    def predict(self, cfg: Config) -> tuple[float, float]:
        ips, power = self.predict_many([cfg])
        return float(ips[0]), float(power[0])

    def predict_many(self, cfgs: Sequence[Config]) -> tuple[np.ndarray, np.ndarray]:
        x = _design_matrix(cfgs, monomial_exponents(self.dims, self.degree))
        return x @ self.coef_ips, x @ self.coef_power


TrainingRow = tuple[Config, float, float]


def training_rows(history: dict[Config, ConfigStats]) -> list[TrainingRow]:
    """One (config, ips, power) row per measured configuration, from the EMAs."""
    rows = [
        (cfg, st.ema_ips.value, st.ema_power.value)
        for cfg, st in history.items()
        if st.count > 0
    ]
    rows.sort(key=lambda r: r[0])
    return rows


def fit_model(
    rows: Iterable[TrainingRow], dims: int, degree: int = DEFAULT_DEGREE
) -> PolyModel:
    """Least-squares polynomial fit of IPS and power over configuration vectors.

    Requires at least as many distinct configurations as monomials; geometric
    rank deficiency beyond that is resolved by the minimum-norm solution.
    """
    if degree not in (1, 2, 3):
        raise ValidationError(f"degree must be 1, 2 or 3, got {degree}")
    by_cfg: dict[Config, tuple[float, float]] = {}
    for cfg, ips, power in rows:
        by_cfg[tuple(cfg)] = (float(ips), float(power))
    exps = monomial_exponents(dims, degree)
    if len(by_cfg) < len(exps):
        raise UnderDeterminedError(
            f"{len(by_cfg)} distinct configurations < {len(exps)} monomials "
            f"for degree {degree} in {dims} dims"
        )
    cfgs = sorted(by_cfg)
    x = _design_matrix(cfgs, exps)
    y = np.array([by_cfg[c] for c in cfgs], dtype=float)
    coef, _res, _rank, _sv = np.linalg.lstsq(x, y, rcond=None)
    return PolyModel(
        dims=dims,
        degree=degree,
        coef_ips=coef[:, 0],
        coef_power=coef[:, 1],
        training_count=len(cfgs),
    )


def fit_aux_model(
    rows: Iterable[TrainingRow], dims: int, degree: int = DEFAULT_DEGREE
) -> PolyModel:
    """As fit_model but anchored with a zero-output all-zero configuration."""
    rows = list(rows)
    zero = tuple([0] * dims)
    if not any(tuple(cfg) == zero for cfg, _i, _p in rows):
        rows.append((zero, 0.0, 0.0))
    return fit_model(rows, dims, degree)


def _sq_dist(a: Config, b: Config) -> int:
    return sum((x - y) * (x - y) for x, y in zip(a, b))


def select_initial_probe(
    measured: Iterable[Config], candidates: Iterable[Config]
) -> Config:
    """Candidate farthest from everything measured; ties pick the smallest vector."""
    cands = sorted(tuple(c) for c in candidates)
    if not cands:
        raise ValidationError("no candidate configurations to probe")
    measured = [tuple(m) for m in measured]
    best = None
    best_dist = -1
    for cand in cands:
        d = min((_sq_dist(cand, m) for m in measured), default=math.inf)
        if d > best_dist:
            best, best_dist = cand, d
    return best


def _relative_diff(main_val: float, aux_val: float, scale: float) -> float:
    if main_val <= 0.0 or aux_val <= 0.0:
        # Anomaly prediction: measure the magnitude against the app's scale so
        # such configurations stay attractive probes.
        return max(abs(main_val), abs(aux_val)) / (scale if scale > 0.0 else 1.0)
    return abs(main_val - aux_val) / max(main_val, aux_val, REL_EPS * scale)


def select_refinement_probe(
    main: PolyModel,
    aux: PolyModel,
    candidates: Iterable[Config],
    ips_scale: float,
    power_scale: float,
) -> Config:
    """Candidate with the largest main/auxiliary model discrepancy.

    The score is the geometric mean of the relative IPS and power differences;
    non-positive predictions switch that metric to a zero-relative difference.
    Ties pick the lexicographically smallest vector.
    """
    cands = sorted(tuple(c) for c in candidates)
    if not cands:
        raise ValidationError("no candidate configurations to probe")
    main_ips, main_pow = main.predict_many(cands)
    aux_ips, aux_pow = aux.predict_many(cands)
    best = None
    best_score = -1.0
    for i, cand in enumerate(cands):
        d_ips = _relative_diff(float(main_ips[i]), float(aux_ips[i]), ips_scale)
        d_pow = _relative_diff(float(main_pow[i]), float(aux_pow[i]), power_scale)
        score = math.sqrt(d_ips * d_pow)
        if score > best_score:
            best, best_score = cand, score
    return best


def predicted_front(
    model: PolyModel,
    platform: Platform,
    measured_points: Sequence[OperatingPoint],
    cap: int | None = None,
) -> list[OperatingPoint]:
    """Pareto front over measured points plus model predictions.

    Predictions are evaluated on the enumerated configuration space, dropped
    where non-positive, and never displace a measured point for the same
    configuration.
    """
    cfgs = enumerate_configurations(platform, cap)
    measured_by_cfg = {pt.config: pt for pt in measured_points}
    pts: list[OperatingPoint] = list(measured_points)
    if cfgs:
        ips, power = model.predict_many(cfgs)
        for i, cfg in enumerate(cfgs):
            if cfg in measured_by_cfg:
                continue
            if ips[i] > 0.0 and power[i] > 0.0:
                pts.append(
                    make_point(cfg, platform, float(ips[i]), float(power[i]), "predicted")
                )
    return pareto_filter(pts)
