"""Route planning inside an assigned cluster.

Members are sub-clustered into local targets; the visiting order is found by
best-improvement subsequence reversal on a utility that rewards normalised
gain and charges normalised leg cost.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cluster import Cluster, MeanShiftConfig, mean_shift
from .errors import DomainError, UnreachableError
from .pathing import pairwise_distances

IMPROVEMENT_TOL = 1e-12


@dataclass(frozen=True)
class UtilityParams:
    c: float = 1.0
    k_g: float = 1.0
    k_l: float = 1.0
    U_G: float = 5.0
    U_L: float = 5.0
    epsilon: float = 1e-9
    theta: float = 10.0
    # -1 charges leg cost against gain; +1 adds it as the printed formula does
    cost_sign: float = -1.0

    def __post_init__(self):
        if self.epsilon <= 0 or self.U_G <= 0 or self.U_L <= 0:
            raise DomainError("epsilon, U_G and U_L must be positive")
        if self.theta < 1:
            raise DomainError("theta must be >= 1")


@dataclass(frozen=True, eq=False)
class Route:
    cells: list                 # robot position first, then targets in visiting order
    order: list                 # indices into the target list
    utility: float
    trace: list = field(default_factory=list)  # utility after each adopted move

    @property
    def targets(self) -> list:
        return self.cells[1:]


def should_plan_locally(clusters: Sequence[Cluster], theta: float) -> bool:
    if not clusters:
        raise DomainError("no clusters")
    return float(np.mean([c.gain for c in clusters])) >= theta


def subcluster(members) -> list[Cluster]:
    """Local targets of a cluster: mean shift with adaptive bandwidth over its members."""
    members = np.asarray(members, dtype=np.int64).reshape(-1, 2)
    if len(members) == 0:
        raise DomainError("cannot sub-cluster an empty member list")
    return mean_shift(members, MeanShiftConfig())


def normalize_gain(gains, params: UtilityParams) -> np.ndarray:
    g = np.asarray(gains, dtype=np.float64)
    if g.size == 0:
        raise DomainError("empty gain list")
    scaled = (g - g.min()) / (g.max() - g.min() + params.epsilon)
    return np.exp(params.k_g * (scaled - 1.0)) * params.U_G


def normalize_cost(distances, params: UtilityParams) -> np.ndarray:
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        raise DomainError("empty distance list")
    if np.any(d < 0):
        raise DomainError("distances must be non-negative")
    scaled = (d - d.min()) / (d.max() - d.min() + params.epsilon)
    return np.log(params.k_l * (scaled + 1.0)) * params.U_L


def leg_lengths(order: Sequence[int], table: np.ndarray) -> np.ndarray:
    """Leg distances along ``order``; ``table`` row/column 0 is the robot."""
    stops = [0] + [i + 1 for i in order]
    return np.array([table[a, b] for a, b in zip(stops[:-1], stops[1:])])


def route_utility(order: Sequence[int], table: np.ndarray, norm_gains,
                  params: UtilityParams) -> float:
    """Sum over visited targets of normalised gain plus signed, scaled leg cost."""
    legs = leg_lengths(order, table)
    if not np.all(np.isfinite(legs)):
        raise UnreachableError("route contains an unreachable leg")
    norm_gains = np.asarray(norm_gains, dtype=np.float64)
    costs = normalize_cost(legs, params)
    return float(np.sum(norm_gains[list(order)] + params.cost_sign * params.c * costs))


def _reversal_search(order: list, table: np.ndarray, norm_gains, params: UtilityParams):
    best = route_utility(order, table, norm_gains, params)
    trace = [best]
    n = len(order)
    while True:
        cand_best, cand_order = best, None
        for x in range(n - 1):
            for y in range(x + 1, n):
                cand = order[:x] + order[x:y + 1][::-1] + order[y + 1:]
                u = route_utility(cand, table, norm_gains, params)
                if u > cand_best + IMPROVEMENT_TOL:
                    cand_best, cand_order = u, cand
        if cand_order is None:
            return order, best, trace
        order, best = cand_order, cand_best
        trace.append(best)


def optimize_route(start, targets: Sequence, gains: Sequence, grid: np.ndarray,
                   params: UtilityParams | None = None, table: np.ndarray | None = None) -> Route:
    """Order ``targets`` (cells) by subsequence reversal, starting from descending gain.

    Targets unreachable from the robot are dropped.  ``table`` may supply
    precomputed geodesic distances among ``[start] + targets``.
    """
    params = params or UtilityParams()
    if len(targets) == 0:
        raise DomainError("optimize_route needs at least one target")
    start = (int(start[0]), int(start[1])) if not hasattr(start, "x") else (start.x, start.y)
    cells = [start] + [(int(t[0]), int(t[1])) for t in targets]
    if table is None:
        table = pairwise_distances(grid, cells)
    keep = [i for i in range(len(targets)) if np.isfinite(table[0, i + 1])]
    if not keep:
        raise UnreachableError("no target is reachable from the robot")
    idx = [0] + [i + 1 for i in keep]
    table = table[np.ix_(idx, idx)]
    kept_gains = np.asarray(gains, dtype=np.float64)[keep]
    norm = normalize_gain(kept_gains, params)
    initial = sorted(range(len(keep)), key=lambda i: (-kept_gains[i], i))
    order, utility, trace = _reversal_search(initial, table, norm, params)
    return Route([start] + [cells[keep[i] + 1] for i in order], [keep[i] for i in order],
                 utility, trace)
