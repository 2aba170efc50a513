# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# distutils: language = c++
"""Compiled twins of ``_kernels_py``; results must match bit for bit."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, sqrt, fabs
from libcpp.queue cimport priority_queue
from libcpp.pair cimport pair
from libcpp.vector cimport vector

cnp.import_array()

cdef double SQRT2 = sqrt(2.0)
cdef int DX[8]
cdef int DY[8]
DX[:] = [1, -1, 0, 0, 1, 1, -1, -1]
DY[:] = [0, 0, 1, -1, 1, -1, 1, -1]

ctypedef pair[double, long] DEntry
ctypedef pair[double, pair[double, long]] AEntry


cdef inline bint _step(const unsigned char[:, ::1] p, long x, long y, int k,
                       long w, long h, long* nx, long* ny, double* cost) noexcept nogil:
    nx[0] = x + DX[k]
    ny[0] = y + DY[k]
    if nx[0] < 0 or ny[0] < 0 or nx[0] >= w or ny[0] >= h or not p[ny[0], nx[0]]:
        return False
    if k >= 4:
        if not (p[y, nx[0]] and p[ny[0], x]):
            return False
        cost[0] = SQRT2
    else:
        cost[0] = 1.0
    return True


def dijkstra_octile(const unsigned char[:, ::1] passable, long sx, long sy):
    cdef long h = passable.shape[0], w = passable.shape[1]
    dist_arr = np.full((h, w), np.inf)
    done_arr = np.zeros((h, w), dtype=np.uint8)
    cdef double[:, ::1] dist = dist_arr
    cdef unsigned char[:, ::1] done = done_arr
    cdef priority_queue[DEntry] pq
    cdef long idx, x, y, nx = 0, ny = 0
    cdef int k
    cdef double d, nd, cost = 0.0
    cdef DEntry top
    dist[sy, sx] = 0.0
    with nogil:
        pq.push(DEntry(-0.0, -(sy * w + sx)))
        while not pq.empty():
            top = pq.top()
            pq.pop()
            d = -top.first
            idx = -top.second
            y = idx // w
            x = idx - y * w
            if done[y, x]:
                continue
            done[y, x] = 1
            for k in range(8):
                if not _step(passable, x, y, k, w, h, &nx, &ny, &cost):
                    continue
                nd = d + cost
                if nd < dist[ny, nx]:
                    dist[ny, nx] = nd
                    pq.push(DEntry(-nd, -(ny * w + nx)))
    return dist_arr


cdef inline double _octile(long x, long y, long gx, long gy) noexcept nogil:
    cdef double dx = fabs(<double>(x - gx))
    cdef double dy = fabs(<double>(y - gy))
    cdef double m = dx if dx < dy else dy
    return (dx + dy) + (SQRT2 - 2.0) * m


def astar_octile(const unsigned char[:, ::1] passable, long sx, long sy, long gx, long gy):
    cdef long h = passable.shape[0], w = passable.shape[1]
    g_arr = np.full((h, w), np.inf)
    parent_arr = np.full((h, w), -1, dtype=np.int64)
    closed_arr = np.zeros((h, w), dtype=np.uint8)
    cdef double[:, ::1] g = g_arr
    cdef cnp.int64_t[:, ::1] parent = parent_arr
    cdef unsigned char[:, ::1] closed = closed_arr
    cdef priority_queue[AEntry] pq
    cdef long idx, x, y, nx = 0, ny = 0
    cdef long goal = gy * w + gx
    cdef int k
    cdef bint found = False
    cdef double gc, ng, hn, cost = 0.0
    cdef AEntry top
    g[sy, sx] = 0.0
    hn = _octile(sx, sy, gx, gy)
    with nogil:
        pq.push(AEntry(-hn, pair[double, long](-hn, -(sy * w + sx))))
        while not pq.empty():
            top = pq.top()
            pq.pop()
            idx = -top.second.second
            y = idx // w
            x = idx - y * w
            if closed[y, x]:
                continue
            closed[y, x] = 1
            if idx == goal:
                found = True
                break
            gc = g[y, x]
            for k in range(8):
                if not _step(passable, x, y, k, w, h, &nx, &ny, &cost):
                    continue
                if closed[ny, nx]:
                    continue
                ng = gc + cost
                if ng < g[ny, nx]:
                    g[ny, nx] = ng
                    parent[ny, nx] = idx
                    hn = _octile(nx, ny, gx, gy)
                    pq.push(AEntry(-(ng + hn), pair[double, long](-hn, -(ny * w + nx))))
    if not found:
        return None
    cells = []
    idx = goal
    while idx != -1:
        y = idx // w
        cells.append((idx - y * w, y))
        idx = parent[y, idx - y * w]
    return np.array(cells[::-1], dtype=np.int64), float(g[gy, gx])


def scanline_fill(const unsigned char[:, ::1] blocked, long sx, long sy):
    cdef long h = blocked.shape[0], w = blocked.shape[1]
    out = np.zeros((h, w), dtype=np.uint8)
    cdef unsigned char[:, ::1] filled = out
    cdef vector[long] stack
    cdef long x, y, left, right, cx, ny, idx
    cdef int side
    cdef bint in_run, open_cell
    if blocked[sy, sx]:
        return out
    with nogil:
        stack.push_back(sy * w + sx)
        while not stack.empty():
            idx = stack.back()
            stack.pop_back()
            y = idx // w
            x = idx - y * w
            if filled[y, x] or blocked[y, x]:
                continue
            left = x
            while left > 0 and not blocked[y, left - 1] and not filled[y, left - 1]:
                left -= 1
            right = x
            while right < w - 1 and not blocked[y, right + 1] and not filled[y, right + 1]:
                right += 1
            for cx in range(left, right + 1):
                filled[y, cx] = 1
            for side in range(2):
                ny = y - 1 if side == 0 else y + 1
                if ny < 0 or ny >= h:
                    continue
                in_run = False
                for cx in range(left, right + 1):
                    open_cell = not blocked[ny, cx] and not filled[ny, cx]
                    if open_cell and not in_run:
                        stack.push_back(ny * w + cx)
                    in_run = open_cell
    return out


def visible_cells(const unsigned char[:, ::1] occupied, long x, long y,
                  const cnp.int64_t[:, ::1] offsets, const cnp.int64_t[:, :, ::1] lines,
                  const cnp.int64_t[::1] line_lens):
    cdef long h = occupied.shape[0], w = occupied.shape[1]
    cdef long n = offsets.shape[0]
    xs_arr = np.empty(n, dtype=np.int64)
    ys_arr = np.empty(n, dtype=np.int64)
    st_arr = np.empty(n, dtype=np.uint8)
    cdef cnp.int64_t[::1] xs = xs_arr
    cdef cnp.int64_t[::1] ys = ys_arr
    cdef unsigned char[::1] st = st_arr
    cdef long i, j, tx, ty, m = 0
    cdef bint blocked
    with nogil:
        for i in range(n):
            tx = x + offsets[i, 0]
            ty = y + offsets[i, 1]
            if tx < 0 or ty < 0 or tx >= w or ty >= h:
                continue
            blocked = False
            for j in range(line_lens[i]):
                if occupied[y + lines[i, j, 1], x + lines[i, j, 0]]:
                    blocked = True
                    break
            if blocked:
                continue
            xs[m] = tx
            ys[m] = ty
            st[m] = 1 if occupied[ty, tx] else 0
            m += 1
    return xs_arr[:m], ys_arr[:m], st_arr[:m]
