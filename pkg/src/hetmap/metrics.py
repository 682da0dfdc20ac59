"""Quality metrics for predicted fronts and regression models."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError
from .opoints import OperatingPoint


@dataclass(frozen=True)
class FrontComparison:
    igd: float
    common_ratio: float
    mape_ips: float
    mape_power: float


def mape(predicted: Sequence[float], actual: Sequence[float]) -> float:
    """Mean absolute percentage error, in percent."""
    pred = np.asarray(predicted, dtype=float)
    act = np.asarray(actual, dtype=float)
    if pred.shape != act.shape:
        raise DomainError(f"length mismatch: {pred.shape} vs {act.shape}")
    if pred.size == 0:
        raise DomainError("mape needs at least one value")
    if np.any(act == 0.0):
        raise DomainError("mape undefined for zero actual values")
    return float(np.mean(np.abs(pred - act) / np.abs(act)) * 100.0)


def _objectives(front: Sequence[OperatingPoint]) -> np.ndarray:
    return np.array([[pt.utility, pt.power] for pt in front], dtype=float)


def igd(
    reference: Sequence[OperatingPoint], generated: Sequence[OperatingPoint]
) -> float:
    """Mean distance from each reference point to the nearest generated point.

    Distances are taken in (utility, power) space with each axis scaled by the
    reference front's range; a zero-range axis keeps its raw scale.
    """
    if len(reference) == 0 or len(generated) == 0:
        raise DomainError("igd needs non-empty fronts")
    ref = _objectives(reference)
    gen = _objectives(generated)
    ranges = ref.max(axis=0) - ref.min(axis=0)
    scale = np.where(ranges > 0.0, ranges, 1.0)
    ref_n = ref / scale
    gen_n = gen / scale
    dists = np.linalg.norm(ref_n[:, None, :] - gen_n[None, :, :], axis=2)
    return float(dists.min(axis=1).mean())


def common_ratio(
    reference: Sequence[OperatingPoint], generated: Sequence[OperatingPoint]
) -> float:
    """Share of reference-front configurations also present in the generated front."""
    if len(reference) == 0:
        raise DomainError("common_ratio needs a non-empty reference front")
    ref_cfgs = {pt.config for pt in reference}
    gen_cfgs = {pt.config for pt in generated}
    return len(ref_cfgs & gen_cfgs) / len(ref_cfgs)


def compare_fronts(
    reference: Sequence[OperatingPoint],
    generated: Sequence[OperatingPoint],
    mape_ips: float = float("nan"),
    mape_power: float = float("nan"),
) -> FrontComparison:
    return FrontComparison(
        igd=igd(reference, generated),
        common_ratio=common_ratio(reference, generated),
        mape_ips=mape_ips,
        mape_power=mape_power,
    )
