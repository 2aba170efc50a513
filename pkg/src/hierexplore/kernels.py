"""Hot-loop kernels with a compiled backend chosen at import time.

The Cython extension ``_ckernels`` is used when it was built; otherwise the
numpy/heapq implementations in ``_kernels_py`` run.  Set the environment
variable ``HIEREXPLORE_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os
from functools import lru_cache

import numpy as np

from . import _kernels_py

if os.environ.get("HIEREXPLORE_PURE_PYTHON"):
    _compiled = None
else:
    try:
        from . import _ckernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _kernels_py


def backends() -> dict:
    """All importable implementations, keyed by name (used by parity tests)."""
    out = {"python": _kernels_py}
    if _compiled is not None:
        out["cython"] = _compiled
    return out


def _u8(mask) -> np.ndarray:
    return np.ascontiguousarray(mask, dtype=np.uint8)


def dijkstra_octile(passable, start, impl=None) -> np.ndarray:
    """Single-source octile distances over ``passable`` (inf where unreachable)."""
    return (impl or _impl).dijkstra_octile(_u8(passable), int(start[0]), int(start[1]))


def astar_octile(passable, start, goal, impl=None):
    return (impl or _impl).astar_octile(_u8(passable), int(start[0]), int(start[1]),
                                        int(goal[0]), int(goal[1]))


def scanline_fill(blocked, seed, impl=None) -> np.ndarray:
    return (impl or _impl).scanline_fill(_u8(blocked), int(seed[0]), int(seed[1])).astype(bool)


def bresenham(x0: int, y0: int, x1: int, y1: int) -> list[tuple[int, int]]:
    """Integer line from (x0, y0) to (x1, y1), endpoints included."""
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    out = []
    while True:
        out.append((x0, y0))
        if x0 == x1 and y0 == y1:
            return out
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


@lru_cache(maxsize=16)
def ray_table(radius: int):
    """Disk offsets (row-major) and the intermediate cells of each ray."""
    offsets = [(dx, dy) for dy in range(-radius, radius + 1)
               for dx in range(-radius, radius + 1) if dx * dx + dy * dy <= radius * radius]
    inner = [bresenham(0, 0, dx, dy)[1:-1] for dx, dy in offsets]
    width = max((len(c) for c in inner), default=0)
    lines = np.zeros((len(offsets), width, 2), dtype=np.int64)
    lens = np.zeros(len(offsets), dtype=np.int64)
    for i, cells in enumerate(inner):
        lens[i] = len(cells)
        if cells:
            lines[i, :len(cells)] = cells
    offs = np.array(offsets, dtype=np.int64).reshape(-1, 2)
    for arr in (offs, lines, lens):
        arr.setflags(write=False)
    return offs, lines, lens


def visible_cells(occupied, pose, radius: int, impl=None):
    offsets, lines, lens = ray_table(int(radius))
    return (impl or _impl).visible_cells(_u8(occupied), int(pose[0]), int(pose[1]),
                                         offsets, lines, lens)
