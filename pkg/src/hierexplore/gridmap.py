"""Occupancy grids: Bayesian cell fusion, tri-state classification, closing.

A tri-state grid is a plain ``uint8`` array of shape ``(height, width)``
holding :data:`FREE`, :data:`OCCUPIED` or :data:`UNKNOWN`.  Cells are
addressed as ``grid[y, x]``; coordinates elsewhere in the package are
``(x, y)`` pairs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import DomainError

FREE = np.uint8(0)
OCCUPIED = np.uint8(1)
UNKNOWN = np.uint8(2)

PROB_FLOOR = 0.01
PROB_CEIL = 0.99

_TEXT_TO_STATE = {".": FREE, "#": OCCUPIED, "?": UNKNOWN}
_STATE_TO_TEXT = {int(v): k for k, v in _TEXT_TO_STATE.items()}


@dataclass(frozen=True)
class Pose:
    x: int
    y: int
    robot_id: int = 0

    @property
    def cell(self) -> tuple[int, int]:
        return (self.x, self.y)


@dataclass(frozen=True)
class SensorModel:
    prior: float = 0.5
    p_hit: float = 0.7
    p_miss: float = 0.3
    free_threshold: float = 0.35
    occ_threshold: float = 0.65

    def __post_init__(self):
        if not 0.0 < self.p_miss < self.prior < self.p_hit < 1.0:
            raise DomainError("sensor model needs 0 < p_miss < prior < p_hit < 1")
        if not self.free_threshold < self.occ_threshold:
            raise DomainError("free_threshold must be below occ_threshold")


@dataclass
class OccupancyGrid:
    """Per-cell occupancy probabilities, row-major ``probs[y, x]``."""

    width: int
    height: int
    resolution: float = 0.05
    probs: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.probs is None:
            self.probs = np.full((self.height, self.width), 0.5)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.shape != (self.height, self.width):
            raise DomainError(
                f"probs shape {self.probs.shape} does not match {self.height}x{self.width}"
            )
        if np.any((self.probs < 0.0) | (self.probs > 1.0)):
            raise DomainError("occupancy probabilities must lie in [0, 1]")

    @classmethod
    def blank(cls, width: int, height: int, resolution: float = 0.05,
              model: SensorModel | None = None) -> "OccupancyGrid":
        prior = (model or SensorModel()).prior
        return cls(width, height, resolution, np.full((height, width), prior))

    def fuse(self, xs, ys, hits, model: SensorModel) -> None:
        """Fold one batch of observations into the grid in place.

        ``hits`` is a boolean array: True for an occupied observation
        (measurement ``p_hit``), False for free (``p_miss``).
        """
        xs = np.asarray(xs, dtype=np.intp)
        ys = np.asarray(ys, dtype=np.intp)
        meas = np.where(np.asarray(hits, dtype=bool), model.p_hit, model.p_miss)
        prev = self.probs[ys, xs]
        post = fuse_probabilities(prev, meas, model.prior)
        self.probs[ys, xs] = np.clip(post, PROB_FLOOR, PROB_CEIL)

    def classify(self, model: SensorModel | None = None) -> np.ndarray:
        return classify(self, model or SensorModel())


def update_cell_occupancy(prev_posterior: float, measurement: float, prior: float) -> float:
    """Recursive occupancy fusion for a single cell.

    Returns ``1 / (1 + odds)`` where ``odds`` multiplies the inverse odds of
    the measurement and of the previous posterior with the prior odds.
    """
    for name, p in (("prev_posterior", prev_posterior), ("measurement", measurement),
                    ("prior", prior)):
        if not 0.0 < p < 1.0 or math.isnan(p):
            raise DomainError(f"{name}={p!r} must lie strictly inside (0, 1)")
    odds = ((1.0 - measurement) / measurement) * ((1.0 - prev_posterior) / prev_posterior) \
        * (prior / (1.0 - prior))
    return 1.0 / (1.0 + odds)


def fuse_probabilities(prev, meas, prior):
    """Vectorised :func:`update_cell_occupancy` (no domain checks)."""
    prev = np.asarray(prev, dtype=np.float64)
    meas = np.asarray(meas, dtype=np.float64)
    odds = ((1.0 - meas) / meas) * ((1.0 - prev) / prev) * (prior / (1.0 - prior))
    return 1.0 / (1.0 + odds)


def classify(grid: OccupancyGrid, model: SensorModel) -> np.ndarray:
    p = grid.probs
    out = np.full(p.shape, UNKNOWN, dtype=np.uint8)
    out[p <= model.free_threshold] = FREE
    out[p >= model.occ_threshold] = OCCUPIED
    return out


def _window_reduce(mask: np.ndarray, radius: int, pad_value: bool, op) -> np.ndarray:
    h, w = mask.shape
    padded = np.pad(mask, radius, constant_values=pad_value)
    out = padded[:h, :w].copy()
    for dy in range(2 * radius + 1):
        for dx in range(2 * radius + 1):
            op(out, padded[dy:dy + h, dx:dx + w], out=out)
    return out


def dilate(mask: np.ndarray, radius: int = 1) -> np.ndarray:
    """Binary dilation with a square window; outside the grid counts as unset."""
    return _window_reduce(np.asarray(mask, dtype=bool), radius, False, np.logical_or)


def erode(mask: np.ndarray, radius: int = 1) -> np.ndarray:
    """Binary erosion with a square window; outside the grid counts as set."""
    return _window_reduce(np.asarray(mask, dtype=bool), radius, True, np.logical_and)


def close_free_space(grid: np.ndarray, radius: int = 1) -> np.ndarray:
    """Morphological closing of the free region.

    Occupied cells are never overwritten, and cells on the map edge are never
    filled since nothing is known beyond the edge.  Both exclusions keep the
    operation idempotent.
    """
    if radius < 1:
        raise DomainError("closing radius must be >= 1")
    free = grid == FREE
    closed = erode(dilate(free, radius), radius)
    closed[0, :] = closed[-1, :] = False
    closed[:, 0] = closed[:, -1] = False
    out = grid.copy()
    out[closed & (grid != OCCUPIED)] = FREE
    return out


def split_channels(grid: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Boolean (unknown, occupied, free) masks."""
    return grid == UNKNOWN, grid == OCCUPIED, grid == FREE


def merge_channels(unknown: np.ndarray, occupied: np.ndarray, free: np.ndarray) -> np.ndarray:
    out = np.full(unknown.shape, UNKNOWN, dtype=np.uint8)
    out[occupied] = OCCUPIED
    out[free] = FREE
    return out


def known_area(grid: np.ndarray) -> int:
    return int(np.count_nonzero(grid != UNKNOWN))


def coverage(explored: np.ndarray, truth: np.ndarray) -> float:
    if explored.shape != truth.shape:
        raise DomainError(f"shape mismatch {explored.shape} vs {truth.shape}")
    total = known_area(truth)
    if total == 0:
        raise DomainError("ground truth has no known cells")
    return known_area(explored) / total


def fuse_tristate(grids: Iterable[np.ndarray]) -> np.ndarray:
    """Combine several tri-state views: free wins, then occupied, else unknown."""
    grids = list(grids)
    out = np.full(grids[0].shape, UNKNOWN, dtype=np.uint8)
    for g in grids:
        out[(g == OCCUPIED) & (out == UNKNOWN)] = OCCUPIED
    for g in grids:
        out[g == FREE] = FREE
    return out


# -- text fixtures -----------------------------------------------------------

def grid_to_text(grid: np.ndarray) -> str:
    h, w = grid.shape
    rows = ["".join(_STATE_TO_TEXT[int(v)] for v in row) for row in grid]
    return f"{w} {h}\n" + "\n".join(rows) + "\n"


def grid_from_text(text: str) -> np.ndarray:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    try:
        w, h = (int(t) for t in lines[0].split())
    except (IndexError, ValueError) as exc:
        raise DomainError("grid text must start with 'w h'") from exc
    return _parse_rows(lines[1:], w, h)


def _parse_rows(rows: list[str], w: int, h: int) -> np.ndarray:
    if len(rows) != h:
        raise DomainError(f"expected {h} rows, found {len(rows)}")
    out = np.empty((h, w), dtype=np.uint8)
    for y, row in enumerate(rows):
        row = row.rstrip("\n")
        if len(row) != w:
            raise DomainError(f"row {y} has {len(row)} cells, expected {w}")
        try:
            out[y] = [_TEXT_TO_STATE[c] for c in row]
        except KeyError as exc:
            raise DomainError(f"unknown cell character {exc.args[0]!r}") from exc
    return out
