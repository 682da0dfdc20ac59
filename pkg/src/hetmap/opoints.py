"""Operating points, application descriptions, Pareto dominance and filtering."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

from .errors import DomainError, ParseError, ValidationError
from .monitor import ConfigStats
from .platform import Config, Platform, footprint

PROVENANCES = ("measured", "predicted", "declared")


@dataclass(frozen=True)
class OperatingPoint:
    config: Config
    theta: tuple[int, ...]
    utility: float
    power: float
    # Informational origin tag; identity is (config, theta, utility, power).
    provenance: str = field(default="declared", compare=False)

    def __post_init__(self):
        if self.utility <= 0.0:
            raise ValidationError(f"operating point utility must be > 0: {self.utility}")
        if self.power <= 0.0:
            raise ValidationError(f"operating point power must be > 0: {self.power}")
        if self.provenance not in PROVENANCES:
            raise ValidationError(f"unknown provenance {self.provenance!r}")


def make_point(
    config: Config,
    platform: Platform,
    utility: float,
    power: float,
    provenance: str = "declared",
) -> OperatingPoint:
    """Build a point with its footprint derived from the configuration."""
    return OperatingPoint(
        config=tuple(config),
        theta=footprint(tuple(config), platform),
        utility=float(utility),
        power=float(power),
        provenance=provenance,
    )


def energy_utility_cost(pt: OperatingPoint) -> float:
    """Power per squared utility: (rho / upsilon) * (1 / upsilon)."""
    if pt.utility <= 0.0:
        raise DomainError(f"utility must be positive, got {pt.utility}")
    return (pt.power / pt.utility) * (1.0 / pt.utility)


def dominates(a: OperatingPoint, b: OperatingPoint) -> bool:
    """True iff a is at least as good everywhere and strictly better somewhere.

    Better means fewer cores of every type, higher utility, lower power.
    """
    if len(a.theta) != len(b.theta):
        raise ValidationError(
            f"footprint dimension mismatch: {len(a.theta)} vs {len(b.theta)}"
        )
    if any(ta > tb for ta, tb in zip(a.theta, b.theta)):
        return False
    if a.utility < b.utility or a.power > b.power:
        return False
    strict = (
        any(ta < tb for ta, tb in zip(a.theta, b.theta))
        or a.utility > b.utility
        or a.power < b.power
    )
    return strict


def _point_key(pt: OperatingPoint) -> tuple:
    return (pt.theta, -pt.utility, pt.power, pt.config)


def pareto_filter(points: list[OperatingPoint]) -> list[OperatingPoint]:
    """Maximal set under dominance, deduplicated, in deterministic order.

    Points identical in (theta, utility, power) collapse to the first one in
    input order. Output is sorted by theta lexicographically, then by utility
    descending.
    """
    unique: list[OperatingPoint] = []
    seen: set[tuple] = set()
    for pt in points:
        key = (pt.theta, pt.utility, pt.power)
        if key not in seen:
            seen.add(key)
            unique.append(pt)
    front = [
        p
        for p in unique
        if not any(q is not p and dominates(q, p) for q in unique)
    ]
    front.sort(key=_point_key)
    return front


@dataclass(frozen=True)
class AppDescription:
    app_id: str
    utility_units: str
    points: tuple[OperatingPoint, ...]
    # Count of points removed by Pareto filtering at load time; not part of identity.
    points_filtered: int = field(default=0, compare=False)

    def __post_init__(self):
        if not self.app_id:
            raise ValidationError("app_id must be non-empty")


class Stage(IntEnum):
    INITIAL = 0
    REFINEMENT = 1
    STABLE = 2

    @property
    def label(self) -> str:
        return self.name.capitalize()


@dataclass
class Application:
    """Runtime identity of a managed application.

    history maps each configuration to its accepted-measurement statistics;
    it has a single writer (the simulation event loop). The stage only moves
    forward within a run.
    """

    app_id: str
    description: AppDescription | None = None
    stage: Stage = Stage.INITIAL
    history: dict[Config, ConfigStats] = field(default_factory=dict)
    priority: float = 1.0

    def __post_init__(self):
        if self.priority <= 0.0:
            raise ValidationError("priority must be positive")

    def advance_stage(self, new: Stage) -> Stage:
        if new > self.stage:
            self.stage = new
        return self.stage


def load_app_description(path: str | Path, platform: Platform) -> AppDescription:
    """Load a description file, validating configs and Pareto-filtering points."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ParseError(f"cannot read description file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"description file {path} is not valid JSON: {exc}") from exc
    try:
        app_id = str(raw["app_id"])
        units = str(raw.get("utility_units", "ips"))
        entries = raw["points"]
        points = []
        for entry in entries:
            cfg = tuple(int(x) for x in entry["config"])
            if len(cfg) != platform.num_dims:
                raise ValidationError(
                    f"description {path}: config {cfg} has {len(cfg)} dims, "
                    f"platform {platform.name!r} has {platform.num_dims}"
                )
            points.append(
                make_point(cfg, platform, entry["utility"], entry["power"], "declared")
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"description file {path} has a malformed entry: {exc}") from exc
    filtered = pareto_filter(points)
    return AppDescription(
        app_id=app_id,
        utility_units=units,
        points=tuple(filtered),
        points_filtered=len(points) - len(filtered),
    )


def save_app_description(desc: AppDescription, path: str | Path) -> None:
    payload = {
        "app_id": desc.app_id,
        "utility_units": desc.utility_units,
        "points": [
            {"config": list(pt.config), "utility": pt.utility, "power": pt.power}
            for pt in desc.points
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
