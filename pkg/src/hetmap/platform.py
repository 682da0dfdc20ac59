"""Heterogeneous processor model: core types, configuration vectors, footprints.

A configuration vector has one dimension per (core type, threads-used) bucket,
in the declaration order of the platform file. A core counted in bucket
(type, j) runs exactly j of its hardware threads; a physical core never
appears in more than one bucket.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ParseError, ValidationError

# One count per (core type, threads-used) bucket, in platform dimension order.
Config = tuple[int, ...]


@dataclass(frozen=True)
class CoreType:
    id: str
    count: int
    hw_threads: int
    power_coefficient: float

    def __post_init__(self):
        if not self.id:
            raise ValidationError("core type id must be non-empty")
        if self.count < 1:
            raise ValidationError(f"core type {self.id!r}: count must be >= 1")
        if self.hw_threads < 1:
            raise ValidationError(f"core type {self.id!r}: hw_threads must be >= 1")
        if self.power_coefficient <= 0.0:
            raise ValidationError(
                f"core type {self.id!r}: power_coefficient must be > 0"
            )


@dataclass(frozen=True)
class Platform:
    name: str
    core_types: tuple[CoreType, ...]

    def __post_init__(self):
        if len(self.core_types) < 1:
            raise ValidationError("platform needs at least one core type")
        ids = [ct.id for ct in self.core_types]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate core type ids in platform: {ids}")

    @property
    def num_types(self) -> int:
        return len(self.core_types)

    @property
    def num_dims(self) -> int:
        return sum(ct.hw_threads for ct in self.core_types)

    def dim_buckets(self) -> list[tuple[int, int]]:
        """(type index, threads used) for every configuration dimension, in order."""
        return [
            (k, j)
            for k, ct in enumerate(self.core_types)
            for j in range(1, ct.hw_threads + 1)
        ]

    def dim_labels(self) -> list[str]:
        return [f"{self.core_types[k].id}x{j}t" for k, j in self.dim_buckets()]

    def type_counts(self) -> tuple[int, ...]:
        return tuple(ct.count for ct in self.core_types)

    def power_coefficients(self) -> tuple[float, ...]:
        return tuple(ct.power_coefficient for ct in self.core_types)


def validate_config(cfg: Config, platform: Platform) -> None:
    """Raise ValidationError unless cfg is well-formed for the platform."""
    if len(cfg) != platform.num_dims:
        raise ValidationError(
            f"configuration has {len(cfg)} dims, platform {platform.name!r} "
            f"has {platform.num_dims}"
        )
    per_type = [0] * platform.num_types
    for (k, _j), c in zip(platform.dim_buckets(), cfg):
        if c < 0 or int(c) != c:
            raise ValidationError(f"configuration entries must be non-negative ints: {cfg}")
        per_type[k] += c
    for k, used in enumerate(per_type):
        if used > platform.core_types[k].count:
            raise ValidationError(
                f"configuration {cfg} uses {used} cores of type "
                f"{platform.core_types[k].id!r}, only {platform.core_types[k].count} exist"
            )


def footprint(cfg: Config, platform: Platform) -> tuple[int, ...]:
    """Physical cores used per core type; a core counts once regardless of threads."""
    if len(cfg) != platform.num_dims:
        raise ValidationError(
            f"configuration has {len(cfg)} dims, expected {platform.num_dims}"
        )
    theta = [0] * platform.num_types
    for (k, _j), c in zip(platform.dim_buckets(), cfg):
        theta[k] += c
    return tuple(theta)


def enumerate_configurations(platform: Platform, cap: int | None = None) -> list[Config]:
    """All configurations satisfying per-type core bounds, without the all-zero one.

    Order is lexicographic over the dimension vector and stable across runs.
    With cap given and fewer configurations wanted than exist, an evenly spaced
    subsample (by enumeration index) of exactly cap configurations is returned.
    """
    per_type: list[list[tuple[int, ...]]] = []
    for ct in platform.core_types:
        combos = [
            c
            for c in itertools.product(range(ct.count + 1), repeat=ct.hw_threads)
            if sum(c) <= ct.count
        ]
        combos.sort()
        per_type.append(combos)
    configs: list[Config] = []
    for parts in itertools.product(*per_type):
        cfg = tuple(itertools.chain.from_iterable(parts))
        if any(cfg):
            configs.append(cfg)
    configs.sort()
    if cap is not None and 0 < cap < len(configs):
        n = len(configs)
        idx = [round(i * (n - 1) / (cap - 1)) for i in range(cap)] if cap > 1 else [0]
        configs = [configs[i] for i in idx]
    return configs


def load_platform(path: str | Path) -> Platform:
    """Load and validate a hardware descriptor file (see README for the schema)."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ParseError(f"cannot read platform file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"platform file {path} is not valid JSON: {exc}") from exc
    try:
        core_types = tuple(
            CoreType(
                id=str(ct["id"]),
                count=int(ct["count"]),
                hw_threads=int(ct["hw_threads"]),
                power_coefficient=float(ct["power_coefficient"]),
            )
            for ct in raw["core_types"]
        )
        name = str(raw.get("name", path.stem))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"platform file {path} has a malformed entry: {exc}") from exc
    return Platform(name=name, core_types=core_types)


def save_platform(platform: Platform, path: str | Path) -> None:
    payload = {
        "name": platform.name,
        "core_types": [
            {
                "id": ct.id,
                "count": ct.count,
                "hw_threads": ct.hw_threads,
                "power_coefficient": ct.power_coefficient,
            }
            for ct in platform.core_types
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
