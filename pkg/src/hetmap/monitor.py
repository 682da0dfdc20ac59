"""Measurement plumbing: EMA smoothing, energy attribution, windowed sampling.

Raw per-window utility (IPS) and power samples are noisy; per-configuration
exponential moving averages stabilise them. After every reconfiguration the
first DISCARD_WINDOWS samples are flagged and excluded from history so the
statistics only reflect settled behaviour.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .platform import Config

DEFAULT_ALPHA = 0.1
DISCARD_WINDOWS = 3
DEFAULT_WINDOW_MS = 50.0


@dataclass(frozen=True)
class EmaState:
    value: float = 0.0
    alpha: float = DEFAULT_ALPHA
    initialized: bool = False


def ema_update(state: EmaState, measured: float) -> EmaState:
    """Fold one observation into the moving average; first observation seeds it."""
    if not math.isfinite(measured):
        raise DomainError(f"non-finite measurement: {measured}")
    if not 0.0 < state.alpha <= 1.0:
        raise DomainError(f"alpha must be in (0, 1]: {state.alpha}")
    if not state.initialized:
        return EmaState(value=measured, alpha=state.alpha, initialized=True)
    new = measured * state.alpha + state.value * (1.0 - state.alpha)
    return EmaState(value=new, alpha=state.alpha, initialized=True)


@dataclass(frozen=True)
class Measurement:
    config: Config
    ips: float
    power: float
    window_ms: float
    timestamp_ms: float
    discarded: bool = False

    def __post_init__(self):
        if self.window_ms <= 0.0:
            raise DomainError("measurement window must be positive")
        if not (math.isfinite(self.ips) and math.isfinite(self.power)):
            raise DomainError("measurement values must be finite")


@dataclass(frozen=True)
class EnergySplit:
    per_type_energy: tuple[float, ...]
    per_type_cpu_time: tuple[float, ...]


def attribute_energy(
    total_energy: float,
    cpu_time_per_type: tuple[float, ...] | list[float],
    coefficients: tuple[float, ...] | list[float],
) -> EnergySplit:
    """Split total energy across core types via static power coefficients.

    Solves total = sum_k T_k * gamma_k * P_ref for the reference power P_ref,
    then assigns energy_k = T_k * gamma_k * P_ref. Works for any number of
    core types; conservation holds exactly up to float rounding.
    """
    if total_energy < 0.0:
        raise DomainError("total energy must be non-negative")
    if len(cpu_time_per_type) != len(coefficients):
        raise DomainError("cpu_time and coefficient vectors must have equal length")
    weights = [t * g for t, g in zip(cpu_time_per_type, coefficients)]
    denom = sum(weights)
    if denom <= 0.0:
        raise DomainError("cannot attribute energy: total CPU time is zero")
    p_ref = total_energy / denom
    energy = tuple(w * p_ref for w in weights)
    return EnergySplit(
        per_type_energy=energy, per_type_cpu_time=tuple(float(t) for t in cpu_time_per_type)
    )


def split_among_apps(
    per_type_energy: tuple[float, ...],
    app_cpu_time_per_type: dict[str, tuple[float, ...]],
) -> dict[str, float]:
    """Attribute each type's energy to apps proportionally to their CPU time."""
    totals = [0.0] * len(per_type_energy)
    for times in app_cpu_time_per_type.values():
        for k, t in enumerate(times):
            totals[k] += t
    out: dict[str, float] = {}
    for app_id in sorted(app_cpu_time_per_type):
        times = app_cpu_time_per_type[app_id]
        e = 0.0
        for k, t in enumerate(times):
            if totals[k] > 0.0:
                e += per_type_energy[k] * (t / totals[k])
        out[app_id] = e
    return out


@dataclass
class ConfigStats:
    """Accepted-measurement summary for one configuration of one application."""

    count: int = 0
    ema_ips: EmaState = field(default_factory=EmaState)
    ema_power: EmaState = field(default_factory=EmaState)


class AppMonitor:
    """Per-application sampling state: noise injection, discards, per-config EMAs."""

    def __init__(
        self,
        alpha: float = DEFAULT_ALPHA,
        noise_sigma: float = 0.0,
        rng: np.random.Generator | None = None,
    ):
        if noise_sigma > 0.0 and rng is None:
            raise DomainError("noisy sampling needs an RNG")
        self.alpha = alpha
        self.noise_sigma = noise_sigma
        self.rng = rng
        self.history: dict[Config, ConfigStats] = {}
        self.windows_accepted = 0
        self.windows_discarded = 0
        self._discard_left = 0

    def on_reconfigure(self) -> None:
        self._discard_left = DISCARD_WINDOWS

    def prime(self, config: Config, ips_ema: float, power_ema: float, count: int) -> None:
        """Resume a configuration's statistics from a previous run."""
        self.history[config] = ConfigStats(
            count=count,
            ema_ips=EmaState(ips_ema, self.alpha, True),
            ema_power=EmaState(power_ema, self.alpha, True),
        )

    def max_observed(self) -> tuple[float, float]:
        """Largest smoothed IPS and power seen so far (0.0 before any sample)."""
        ips = 0.0
        power = 0.0
        for st in self.history.values():
            if st.count > 0:
                ips = max(ips, st.ema_ips.value)
                power = max(power, st.ema_power.value)
        return ips, power

    def sample_window(
        self,
        config: Config,
        true_ips: float,
        true_power: float,
        timestamp_ms: float,
        window_ms: float = DEFAULT_WINDOW_MS,
    ) -> Measurement:
        """Record one measurement window against the hidden behaviour values."""
        ips, power = true_ips, true_power
        if self.noise_sigma > 0.0:
            g_ips, g_pow = self.rng.normal(0.0, self.noise_sigma, size=2)
            ips = max(true_ips * (1.0 + g_ips), 0.0)
            power = max(true_power * (1.0 + g_pow), 0.0)
        discarded = self._discard_left > 0
        if discarded:
            self._discard_left -= 1
            self.windows_discarded += 1
        m = Measurement(
            config=config,
            ips=ips,
            power=power,
            window_ms=window_ms,
            timestamp_ms=timestamp_ms,
            discarded=discarded,
        )
        if not discarded:
            st = self.history.get(config)
            if st is None:
                st = ConfigStats(
                    ema_ips=EmaState(alpha=self.alpha),
                    ema_power=EmaState(alpha=self.alpha),
                )
                self.history[config] = st
            st.count += 1
            st.ema_ips = ema_update(st.ema_ips, ips)
            st.ema_power = ema_update(st.ema_power, power)
            self.windows_accepted += 1
        return m
