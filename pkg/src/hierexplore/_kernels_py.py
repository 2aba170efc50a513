"""Reference implementations of the hot kernels (numpy + heapq).

Every function here has a twin in ``_ckernels.pyx`` that must return
identical results, including float rounding: both process heap entries in
the same lexicographic key order and accumulate costs in the same sequence.
"""
import heapq
import math

import numpy as np

SQRT2 = math.sqrt(2.0)

# orthogonal moves first, then diagonals
_DX = (1, -1, 0, 0, 1, 1, -1, -1)
_DY = (0, 0, 1, -1, 1, -1, 1, -1)


def _moves(passable, x, y, w, h):
    for k in range(8):
        nx, ny = x + _DX[k], y + _DY[k]
        if nx < 0 or ny < 0 or nx >= w or ny >= h or not passable[ny, nx]:
            continue
        if k >= 4:
            if not (passable[y, nx] and passable[ny, x]):
                continue
            yield nx, ny, SQRT2
        else:
            yield nx, ny, 1.0


def dijkstra_octile(passable, sx, sy):
    h, w = passable.shape
    dist = np.full((h, w), np.inf)
    done = np.zeros((h, w), dtype=bool)
    dist[sy, sx] = 0.0
    heap = [(0.0, sy * w + sx)]
    while heap:
        d, idx = heapq.heappop(heap)
        y, x = divmod(idx, w)
        if done[y, x]:
            continue
        done[y, x] = True
        for nx, ny, cost in _moves(passable, x, y, w, h):
            nd = d + cost
            if nd < dist[ny, nx]:
                dist[ny, nx] = nd
                heapq.heappush(heap, (nd, ny * w + nx))
    return dist


def _octile(x, y, gx, gy):
    dx = abs(x - gx)
    dy = abs(y - gy)
    return (dx + dy) + (SQRT2 - 2.0) * min(dx, dy)


def astar_octile(passable, sx, sy, gx, gy):
    """Returns ``(cells, length)`` with cells an ``(k, 2)`` array of (x, y), or None."""
    h, w = passable.shape
    g = np.full((h, w), np.inf)
    parent = np.full((h, w), -1, dtype=np.int64)
    closed = np.zeros((h, w), dtype=bool)
    g[sy, sx] = 0.0
    h0 = _octile(sx, sy, gx, gy)
    heap = [(h0, h0, sy * w + sx)]
    goal = gy * w + gx
    while heap:
        _, _, idx = heapq.heappop(heap)
        y, x = divmod(idx, w)
        if closed[y, x]:
            continue
        closed[y, x] = True
        if idx == goal:
            cells = []
            while idx != -1:
                cells.append(divmod(idx, w)[::-1])
                idx = parent.flat[idx]
            return np.array(cells[::-1], dtype=np.int64), float(g[gy, gx])
        gc = g[y, x]
        for nx, ny, cost in _moves(passable, x, y, w, h):
            if closed[ny, nx]:
                continue
            ng = gc + cost
            if ng < g[ny, nx]:
                g[ny, nx] = ng
                parent[ny, nx] = idx
                hn = _octile(nx, ny, gx, gy)
                heapq.heappush(heap, (ng + hn, hn, ny * w + nx))
    return None


def scanline_fill(blocked, sx, sy):
    """4-connected span fill from (sx, sy) over cells where ``blocked`` is 0."""
    h, w = blocked.shape
    filled = np.zeros((h, w), dtype=np.uint8)
    if blocked[sy, sx]:
        return filled
    stack = [(sx, sy)]
    while stack:
        x, y = stack.pop()
        if filled[y, x] or blocked[y, x]:
            continue
        left = x
        while left > 0 and not blocked[y, left - 1] and not filled[y, left - 1]:
            left -= 1
        right = x
        while right < w - 1 and not blocked[y, right + 1] and not filled[y, right + 1]:
            right += 1
        filled[y, left:right + 1] = 1
        for ny in (y - 1, y + 1):
            if ny < 0 or ny >= h:
                continue
            in_run = False
            for cx in range(left, right + 1):
                open_cell = not blocked[ny, cx] and not filled[ny, cx]
                if open_cell and not in_run:
                    stack.append((cx, ny))
                in_run = open_cell
    return filled


def visible_cells(occupied, x, y, offsets, lines, line_lens):
    """Per-cell line-of-sight over a precomputed disk of ray offsets.

    ``lines[i, :line_lens[i]]`` are the intermediate cells (relative to the
    robot) between the robot and target ``offsets[i]``.  A target is visible
    when it is inside the grid and no intermediate cell is occupied.
    Returns ``(xs, ys, states)`` with states 1 for occupied, 0 for free.
    """
    h, w = occupied.shape
    tx = x + offsets[:, 0]
    ty = y + offsets[:, 1]
    inb = (tx >= 0) & (ty >= 0) & (tx < w) & (ty < h)
    if lines.shape[1]:
        px = np.clip(x + lines[:, :, 0], 0, w - 1)
        py = np.clip(y + lines[:, :, 1], 0, h - 1)
        valid = np.arange(lines.shape[1])[None, :] < line_lens[:, None]
        blocked = (occupied[py, px].astype(bool) & valid).any(axis=1)
        inb &= ~blocked
    xs = tx[inb]
    ys = ty[inb]
    return xs, ys, occupied[ys, xs].astype(np.uint8)
