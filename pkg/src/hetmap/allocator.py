"""Per-invocation operating-point selection under per-type core capacity.

Choosing one point per application to minimise the summed energy-utility cost
subject to the core-count vector is a multiple-choice multidimensional
knapsack. allocate() runs a Lagrangian-relaxation heuristic: per-type
multipliers are tightened by projected subgradient steps, every feasible
iterate is kept as a seed, infeasible outcomes go through a multiplier-guided
repair phase plus an overshoot-descent fallback, and all feasible seeds are
polished by 1- and 2-swap local search. allocate_exact() enumerates all
selections and serves as the reference oracle for small instances.

Costs are normalised inside this module: each application's utilities are
divided by its best candidate utility and scaled by its priority before the
energy-utility cost is computed, so costs are comparable across applications
with different utility scales.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import IO

import numpy as np

from .errors import InstanceTooLargeError, ValidationError
from .opoints import OperatingPoint, make_point
from .platform import Platform

MAX_SUBGRADIENT_ITERS = 200
MAX_REPAIR_ITERS = 200
MAX_DESCENT_ITERS = 200
STABLE_ITERS = 3

CoreSlot = tuple[str, int, int]  # (core type id, core index, threads used)


@dataclass(frozen=True)
class AppCandidates:
    app_id: str
    points: tuple[OperatingPoint, ...]
    priority: float = 1.0

    def __post_init__(self):
        if not self.app_id:
            raise ValidationError("app_id must be non-empty")
        if self.priority <= 0.0:
            raise ValidationError("priority must be positive")


@dataclass(frozen=True)
class AllocationRequest:
    apps: tuple[AppCandidates, ...]
    platform: Platform

    def __post_init__(self):
        ids = [a.app_id for a in self.apps]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate app ids in request: {ids}")


@dataclass
class Allocation:
    choices: dict[str, OperatingPoint]
    core_assignment: dict[str, frozenset[CoreSlot]]
    feasible: bool
    total_cost: float
    coallocated: frozenset[str] = field(default_factory=frozenset)


def synthetic_minimal_point(platform: Platform) -> OperatingPoint:
    """One single-threaded core of the cheapest type, for bootstrapping apps
    that do not have any candidate points yet."""
    k = min(
        range(platform.num_types),
        key=lambda i: (platform.core_types[i].power_coefficient, i),
    )
    cfg = [0] * platform.num_dims
    for d, (tk, j) in enumerate(platform.dim_buckets()):
        if tk == k and j == 1:
            cfg[d] = 1
            break
    return make_point(tuple(cfg), platform, 1.0, 1.0, "declared")


def effective_costs(app: AppCandidates) -> list[float]:
    """Priority-weighted, utility-normalised energy-utility cost per candidate."""
    umax = max(pt.utility for pt in app.points)
    costs = []
    for pt in app.points:
        u = app.priority * (pt.utility / umax)
        costs.append(pt.power / (u * u))
    return costs


def _prepared(req: AllocationRequest) -> list[tuple[AppCandidates, np.ndarray, np.ndarray]]:
    """Apps sorted by id with candidate footprints and costs, empty lists
    replaced by the synthetic bootstrap point."""
    out = []
    for app in sorted(req.apps, key=lambda a: a.app_id):
        if not app.points:
            app = AppCandidates(
                app_id=app.app_id,
                points=(synthetic_minimal_point(req.platform),),
                priority=app.priority,
            )
        thetas = np.array([pt.theta for pt in app.points], dtype=float)
        costs = np.array(effective_costs(app), dtype=float)
        out.append((app, thetas, costs))
    return out


def total_cost_of(req: AllocationRequest, choices: dict[str, OperatingPoint]) -> float:
    """Recompute the objective value of a selection from scratch."""
    total = 0.0
    for app, _thetas, costs in _prepared(req):
        pt = choices[app.app_id]
        idx = next(i for i, cand in enumerate(app.points) if cand == pt)
        total += costs[idx]
    return total


def _demand(prep, sel: list[int]) -> np.ndarray:
    return np.sum([thetas[s] for (_a, thetas, _c), s in zip(prep, sel)], axis=0)


def _cost(prep, sel: list[int]) -> float:
    return float(sum(costs[s] for (_a, _t, costs), s in zip(prep, sel)))


def _feasible(prep, sel: list[int], caps: np.ndarray) -> bool:
    return bool(np.all(_demand(prep, sel) <= caps))


def _improve(prep, sel: list[int], caps: np.ndarray) -> list[int]:
    """1- and 2-swap descent: deterministic, keeps feasibility, lowers cost."""
    sel = list(sel)
    demand = _demand(prep, sel)
    for _ in range(MAX_DESCENT_ITERS):
        changed = False
        # Single swaps, best per app, apps in id order.
        for i, (_app, thetas, costs) in enumerate(prep):
            cur = sel[i]
            base = demand - thetas[cur]
            best_j, best_cost = cur, costs[cur]
            for j in range(len(costs)):
                if j == cur or costs[j] >= best_cost:
                    continue
                if np.all(base + thetas[j] <= caps):
                    best_j, best_cost = j, costs[j]
            if best_j != cur:
                demand = base + thetas[best_j]
                sel[i] = best_j
                changed = True
        if changed:
            continue
        # Coordinated pair swaps when no single swap helps.
        best_pair = None
        best_delta = -1e-12  # a move must strictly lower the cost
        for i in range(len(prep)):
            _ai, thetas_i, costs_i = prep[i]
            for j in range(i + 1, len(prep)):
                _aj, thetas_j, costs_j = prep[j]
                base = demand - thetas_i[sel[i]] - thetas_j[sel[j]]
                for ci in range(len(costs_i)):
                    for cj in range(len(costs_j)):
                        if ci == sel[i] and cj == sel[j]:
                            continue
                        delta = float(
                            costs_i[ci] + costs_j[cj] - costs_i[sel[i]] - costs_j[sel[j]]
                        )
                        if delta >= best_delta:
                            continue
                        if np.all(base + thetas_i[ci] + thetas_j[cj] <= caps):
                            best_pair = (i, ci, j, cj)
                            best_delta = delta
        if best_pair is not None:
            i, ci, j, cj = best_pair
            demand = (
                demand
                - prep[i][1][sel[i]]
                - prep[j][1][sel[j]]
                + prep[i][1][ci]
                + prep[j][1][cj]
            )
            sel[i], sel[j] = ci, cj
            continue
        move = _best_triple_swap(prep, sel, demand, caps)
        if move is None:
            break
        (i, ci), (j, cj), (k, ck) = move
        demand = (
            demand
            - prep[i][1][sel[i]]
            - prep[j][1][sel[j]]
            - prep[k][1][sel[k]]
            + prep[i][1][ci]
            + prep[j][1][cj]
            + prep[k][1][ck]
        )
        sel[i], sel[j], sel[k] = ci, cj, ck
    return sel


# Triple swaps are only affordable on small instances; larger ones stop at
# pair swaps.
TRIPLE_SWAP_MAX_CANDS = 12
TRIPLE_SWAP_MAX_APPS = 8


def _best_triple_swap(prep, sel, demand, caps):
    if len(prep) < 3 or len(prep) > TRIPLE_SWAP_MAX_APPS:
        return None
    if max(len(c) for (_a, _t, c) in prep) > TRIPLE_SWAP_MAX_CANDS:
        return None
    best_move = None
    best_delta = -1e-12
    for i, j, k in itertools.combinations(range(len(prep)), 3):
        thetas = (prep[i][1], prep[j][1], prep[k][1])
        costs = (prep[i][2], prep[j][2], prep[k][2])
        cur = (sel[i], sel[j], sel[k])
        base = demand - thetas[0][cur[0]] - thetas[1][cur[1]] - thetas[2][cur[2]]
        cost_cur = costs[0][cur[0]] + costs[1][cur[1]] + costs[2][cur[2]]
        for ci in range(len(costs[0])):
            for cj in range(len(costs[1])):
                for ck in range(len(costs[2])):
                    if (ci, cj, ck) == cur:
                        continue
                    delta = float(
                        costs[0][ci] + costs[1][cj] + costs[2][ck] - cost_cur
                    )
                    if delta >= best_delta:
                        continue
                    if np.all(
                        base + thetas[0][ci] + thetas[1][cj] + thetas[2][ck] <= caps
                    ):
                        best_move = ((i, ci), (j, cj), (k, ck))
                        best_delta = delta
    return best_move


def _repair(prep, sel: list[int], lam: np.ndarray, caps: np.ndarray) -> list[int]:
    """Swap points away from overloaded types, cheapest cost increase first.

    Pressure weights are the final multipliers plus the current per-type
    overshoot, so the phase still makes progress when the multipliers ended
    at zero.
    """
    sel = list(sel)
    for _ in range(MAX_REPAIR_ITERS):
        demand = _demand(prep, sel)
        over = demand - caps
        if np.all(over <= 0.0):
            break
        mu = lam + np.maximum(over, 0.0)
        order = sorted(
            range(len(prep)),
            key=lambda i: (-float(mu @ prep[i][1][sel[i]]), prep[i][0].app_id),
        )
        swapped = False
        for i in order:
            _app, thetas, costs = prep[i]
            cur = sel[i]
            usage = float(mu @ thetas[cur])
            best_key = None
            best_j = None
            for j in range(len(costs)):
                if j == cur:
                    continue
                drop = usage - float(mu @ thetas[j])
                if drop <= 1e-12:
                    continue
                ratio = (float(costs[j]) - float(costs[cur])) / drop
                key = (ratio, -drop, j)
                if best_key is None or key < best_key:
                    best_key, best_j = key, j
            if best_j is not None:
                sel[i] = best_j
                swapped = True
                break
        if not swapped:
            break
    return sel


def _overshoot_descent(prep, sel: list[int], caps: np.ndarray) -> list[int]:
    """Swaps minimising total capacity overshoot, then cost.

    Escalates from single swaps to pair moves (and triple moves on small
    instances) because overshoot often cannot shrink one application at a
    time: freeing one core type usually means loading another.
    """
    sel = list(sel)
    demand = _demand(prep, sel)
    for _ in range(MAX_DESCENT_ITERS):
        over = float(np.maximum(demand - caps, 0.0).sum())
        if over <= 0.0:
            break
        best_key = None
        best_move = None
        for i, (_app, thetas, costs) in enumerate(prep):
            cur = sel[i]
            base = demand - thetas[cur]
            for j in range(len(costs)):
                if j == cur:
                    continue
                over_j = float(np.maximum(base + thetas[j] - caps, 0.0).sum())
                if over_j >= over - 1e-9:
                    continue
                key = (over_j, float(costs[j] - costs[cur]), i, j)
                if best_key is None or key < best_key:
                    best_key, best_move = key, [(i, j)]
        if best_move is None:
            for i, k in itertools.combinations(range(len(prep)), 2):
                _ai, thetas_i, costs_i = prep[i]
                _ak, thetas_k, costs_k = prep[k]
                base = demand - thetas_i[sel[i]] - thetas_k[sel[k]]
                for ci in range(len(costs_i)):
                    for ck in range(len(costs_k)):
                        if ci == sel[i] and ck == sel[k]:
                            continue
                        over_j = float(
                            np.maximum(base + thetas_i[ci] + thetas_k[ck] - caps, 0.0).sum()
                        )
                        if over_j >= over - 1e-9:
                            continue
                        dcost = float(
                            costs_i[ci] + costs_k[ck] - costs_i[sel[i]] - costs_k[sel[k]]
                        )
                        key = (over_j, dcost, i, ci, k, ck)
                        if best_key is None or key < best_key:
                            best_key, best_move = key, [(i, ci), (k, ck)]
        if best_move is None:
            break
        for i, j in best_move:
            demand = demand - prep[i][1][sel[i]] + prep[i][1][j]
            sel[i] = j
    return sel


def _greedy_cover(prep, caps: np.ndarray) -> tuple[list[int], set[str]]:
    """Cover apps smallest-footprint-first with densely packing points."""
    order = sorted(
        range(len(prep)),
        key=lambda i: (float(prep[i][1].sum(axis=1).min()), prep[i][0].app_id),
    )
    remaining = caps.copy()
    sel = [0] * len(prep)
    uncovered: set[str] = set()
    for i in order:
        app, thetas, costs = prep[i]
        fitting = [j for j in range(len(costs)) if np.all(thetas[j] <= remaining)]
        if not fitting:
            uncovered.add(app.app_id)
            continue
        j = min(fitting, key=lambda j: (float(thetas[j].sum()), float(costs[j]), j))
        sel[i] = j
        remaining -= thetas[j]
    return sel, uncovered


def _min_theta_sel(prep) -> list[int]:
    sel = []
    for _app, thetas, costs in prep:
        j = min(
            range(len(costs)),
            key=lambda j: (float(thetas[j].sum()), float(costs[j]), j),
        )
        sel.append(j)
    return sel


def _build_allocation(
    req: AllocationRequest,
    prep,
    sel: list[int],
    feasible: bool,
    coallocated: frozenset[str] = frozenset(),
) -> Allocation:
    choices = {app.app_id: app.points[s] for (app, _t, _c), s in zip(prep, sel)}
    assignment = assign_cores(choices, req.platform, coallocated=coallocated)
    if coallocated:
        coallocated = _overlap_closure(assignment, coallocated)
    return Allocation(
        choices=choices,
        core_assignment=assignment,
        feasible=feasible,
        total_cost=_cost(prep, sel),
        coallocated=coallocated,
    )


def allocate(req: AllocationRequest, debug_trace: IO[str] | None = None) -> Allocation:
    """Heuristic solve; falls back to co-allocation when no selection fits.

    Deterministic for identical inputs: apps are processed in app_id order and
    all ties break on the lowest candidate index.
    """
    prep = _prepared(req)
    if not prep:
        return Allocation(choices={}, core_assignment={}, feasible=True, total_cost=0.0)
    m = req.platform.num_types
    caps = np.array(req.platform.type_counts(), dtype=float)
    lam = np.zeros(m)
    eta0 = 1.0 / float(caps.sum())

    if debug_trace is not None:
        types = [ct.id for ct in req.platform.core_types]
        debug_trace.write(
            "iter,cost,feasible,"
            + ",".join(f"lambda_{t}" for t in types)
            + ","
            + ",".join(f"demand_{t}" for t in types)
            + "\n"
        )

    seeds: dict[tuple[int, ...], None] = {}
    prev_sel: tuple[int, ...] | None = None
    stable = 0
    sel = [0] * len(prep)
    for it in range(1, MAX_SUBGRADIENT_ITERS + 1):
        sel = [int(np.argmin(costs + thetas @ lam)) for (_a, thetas, costs) in prep]
        demand = _demand(prep, sel)
        feasible = bool(np.all(demand <= caps))
        if debug_trace is not None:
            debug_trace.write(
                f"{it},{_cost(prep, sel)},{int(feasible)},"
                + ",".join(f"{v}" for v in lam)
                + ","
                + ",".join(f"{v:g}" for v in demand)
                + "\n"
            )
        if feasible:
            seeds.setdefault(tuple(sel))
        if feasible and tuple(sel) == prev_sel:
            stable += 1
            if stable >= STABLE_ITERS:
                break
        else:
            stable = 0
        prev_sel = tuple(sel)
        eta = eta0 / math.sqrt(it)
        lam = np.maximum(0.0, lam + eta * (demand - caps))

    if not _feasible(prep, sel, caps):
        repaired = _repair(prep, sel, lam, caps)
        if _feasible(prep, repaired, caps):
            seeds.setdefault(tuple(repaired))
        else:
            rescued = _overshoot_descent(prep, repaired, caps)
            if _feasible(prep, rescued, caps):
                seeds.setdefault(tuple(rescued))

    for candidate in (_min_theta_sel(prep), _greedy_cover(prep, caps)[0]):
        if _feasible(prep, candidate, caps):
            seeds.setdefault(tuple(candidate))
        else:
            rescued = _overshoot_descent(prep, candidate, caps)
            if _feasible(prep, rescued, caps):
                seeds.setdefault(tuple(rescued))

    if seeds:
        best_sel = None
        best_key = None
        for seed in seeds:
            improved = _improve(prep, list(seed), caps)
            key = (_cost(prep, improved), tuple(improved))
            if best_key is None or key < best_key:
                best_key, best_sel = key, improved
        return _build_allocation(req, prep, best_sel, feasible=True)

    covered_sel, uncovered = _greedy_cover(prep, caps)
    partial_ids = [app.app_id for (app, _t, _c) in prep if app.app_id not in uncovered]
    partial_sel = {
        app.app_id: covered_sel[i]
        for i, (app, _t, _c) in enumerate(prep)
        if app.app_id not in uncovered
    }
    # Let the covered subset settle on better points inside the capacity it has.
    sub_prep = [p for p in prep if p[0].app_id in partial_sel]
    sub_sel = _improve(sub_prep, [partial_sel[p[0].app_id] for p in sub_prep], caps)
    partial_choices = {
        p[0].app_id: p[0].points[s] for p, s in zip(sub_prep, sub_sel)
    }
    partial = Allocation(
        choices=partial_choices,
        core_assignment=assign_cores(partial_choices, req.platform),
        feasible=False,
        total_cost=_cost(sub_prep, sub_sel),
    )
    return coallocate_fallback(req, partial)


def allocate_exact(req: AllocationRequest, bound: int = 1_000_000) -> Allocation:
    """Reference solver: full enumeration, globally optimal or feasible=False.

    Ties break toward the lexicographically smallest candidate-index sequence
    over apps in app_id order.
    """
    prep = _prepared(req)
    if not prep:
        return Allocation(choices={}, core_assignment={}, feasible=True, total_cost=0.0)
    size = 1
    for _app, _thetas, costs in prep:
        size *= len(costs)
        if size > bound:
            raise InstanceTooLargeError(f"instance has more than {bound} selections")
    caps = np.array(req.platform.type_counts(), dtype=float)
    best_combo = None
    best_cost = math.inf
    for combo in itertools.product(*(range(len(c)) for (_a, _t, c) in prep)):
        demand = _demand(prep, list(combo))
        if not np.all(demand <= caps):
            continue
        cost = _cost(prep, list(combo))
        if cost < best_cost:
            best_combo, best_cost = combo, cost
    if best_combo is None:
        return Allocation(
            choices={}, core_assignment={}, feasible=False, total_cost=math.inf
        )
    return _build_allocation(req, prep, list(best_combo), feasible=True)


def coallocate_fallback(req: AllocationRequest, partial: Allocation) -> Allocation:
    """Give every uncovered application its minimum-footprint point, flagged
    for time-multiplexing; the result is marked infeasible."""
    prep = _prepared(req)
    uncovered = [app for (app, _t, _c) in prep if app.app_id not in partial.choices]
    if not uncovered:
        return partial
    choices = dict(partial.choices)
    flagged = set(a.app_id for a in uncovered)
    total = partial.total_cost
    for app, thetas, costs in prep:
        if app.app_id not in flagged:
            continue
        j = min(
            range(len(costs)),
            key=lambda j: (float(thetas[j].sum()), float(costs[j]), j),
        )
        choices[app.app_id] = app.points[j]
        total += float(costs[j])
    assignment = assign_cores(choices, req.platform, coallocated=frozenset(flagged))
    coallocated = _overlap_closure(assignment, frozenset(flagged))
    return Allocation(
        choices=choices,
        core_assignment=assignment,
        feasible=False,
        total_cost=total,
        coallocated=coallocated,
    )


def _overlap_closure(
    assignment: dict[str, frozenset[CoreSlot]], flagged: frozenset[str]
) -> frozenset[str]:
    """Extend the co-allocation flag to every app sharing a core with another."""
    core_users: dict[tuple[str, int], set[str]] = {}
    for app_id, slots in assignment.items():
        for type_id, idx, _threads in slots:
            core_users.setdefault((type_id, idx), set()).add(app_id)
    out = set(flagged)
    for users in core_users.values():
        if len(users) > 1:
            out.update(users)
    return frozenset(out)


def assign_cores(
    choices: dict[str, OperatingPoint],
    platform: Platform,
    coallocated: frozenset[str] = frozenset(),
) -> dict[str, frozenset[CoreSlot]]:
    """First-fit concrete core slots for each chosen point.

    Non-co-allocated apps receive pairwise disjoint cores (a capacity
    violation there is an internal error). Co-allocated apps stack onto the
    least-loaded cores of the needed type and may overlap anything; a point
    demanding more cores of a type than physically exist is trimmed to the
    type's core count.
    """
    loads: list[list[int]] = [[0] * ct.count for ct in platform.core_types]
    buckets = platform.dim_buckets()
    out: dict[str, frozenset[CoreSlot]] = {}
    normal = sorted(a for a in choices if a not in coallocated)
    shared = sorted(a for a in choices if a in coallocated)
    for app_id in normal:
        slots: list[CoreSlot] = []
        for d, need in enumerate(choices[app_id].config):
            if need == 0:
                continue
            k, j = buckets[d]
            free = [i for i, l in enumerate(loads[k]) if l == 0]
            if len(free) < need:
                raise ValidationError(
                    f"internal: capacity violated for type {platform.core_types[k].id!r} "
                    f"without a co-allocation flag"
                )
            for i in free[:need]:
                loads[k][i] = 1
                slots.append((platform.core_types[k].id, i, j))
        out[app_id] = frozenset(slots)
    for app_id in shared:
        slots = []
        taken: set[tuple[int, int]] = set()
        for d, need in enumerate(choices[app_id].config):
            if need == 0:
                continue
            k, j = buckets[d]
            ranked = sorted(
                (i for i in range(len(loads[k])) if (k, i) not in taken),
                key=lambda i: (loads[k][i], i),
            )
            for i in ranked[: min(need, len(ranked))]:
                loads[k][i] += 1
                taken.add((k, i))
                slots.append((platform.core_types[k].id, i, j))
        out[app_id] = frozenset(slots)
    return out
