"""Octile A* over free cells, reachability, and robot-to-target distance tables."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from . import kernels
from .errors import DomainError, UnreachableError
from .gridmap import FREE

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class Path:
    cells: np.ndarray  # (k, 2) of (x, y), start first
    length: float

    def __len__(self):
        return len(self.cells)


def passable(grid: np.ndarray) -> np.ndarray:
    return grid == FREE


def octile_distance(a, b) -> float:
    dx, dy = abs(a[0] - b[0]), abs(a[1] - b[1])
    return (dx + dy) + (SQRT2 - 2.0) * min(dx, dy)


def _require_free(grid: np.ndarray, cell, name: str) -> None:
    x, y = cell
    h, w = grid.shape
    if not (0 <= x < w and 0 <= y < h) or grid[y, x] != FREE:
        raise DomainError(f"{name} {tuple(cell)} is not a free cell")


def astar(grid: np.ndarray, start, goal) -> Path:
    """Cost-optimal 8-connected path; diagonal moves may not cut corners."""
    _require_free(grid, start, "start")
    _require_free(grid, goal, "goal")
    found = kernels.astar_octile(passable(grid), start, goal)
    if found is None:
        raise UnreachableError(f"no path from {tuple(start)} to {tuple(goal)}")
    cells, length = found
    return Path(cells, length)


def is_reachable(grid: np.ndarray, start, goal) -> bool:
    # Without corner cutting, every diagonal move can be replaced by two
    # orthogonal ones, so 8-connected reachability equals 4-connected.
    h, w = grid.shape
    if not (0 <= goal[0] < w and 0 <= goal[1] < h):
        return False
    free = passable(grid)
    if not free[start[1], start[0]] or not free[goal[1], goal[0]]:
        return False
    labels, _ = ndimage.label(free)
    return labels[start[1], start[0]] == labels[goal[1], goal[0]]


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    entries: np.ndarray  # (robots, targets), inf where unreachable

    @property
    def reachable(self) -> np.ndarray:
        return np.isfinite(self.entries)

    @property
    def shape(self):
        return self.entries.shape


def distance_field(grid: np.ndarray, source) -> np.ndarray:
    _require_free(grid, source, "source")
    return kernels.dijkstra_octile(passable(grid), source)


def distance_matrix(grid: np.ndarray, robots: Sequence, targets: Sequence) -> DistanceMatrix:
    """Geodesic robot-to-target lengths, one Dijkstra sweep per robot."""
    targets = np.asarray(targets, dtype=np.int64).reshape(-1, 2)
    out = np.full((len(robots), len(targets)), np.inf)
    for i, r in enumerate(robots):
        cell = (r.x, r.y) if hasattr(r, "x") else tuple(r)
        field = distance_field(grid, cell)
        if len(targets):
            out[i] = field[targets[:, 1], targets[:, 0]]
    return DistanceMatrix(out)


def pairwise_distances(grid: np.ndarray, cells: Sequence) -> np.ndarray:
    """Symmetric geodesic table among ``cells`` (inf where disconnected)."""
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    n = len(cells)
    out = np.zeros((n, n))
    for i in range(n):
        field = distance_field(grid, cells[i])
        out[i] = field[cells[:, 1], cells[:, 0]]
    return np.minimum(out, out.T)
