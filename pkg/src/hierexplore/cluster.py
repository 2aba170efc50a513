"""Flat-kernel mean shift over frontier cells, with centers snapped onto members."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .errors import DomainError

BANDWIDTH_PERCENTILE = 15.0
# pairwise distances are O(n^2); larger inputs are subsampled evenly
BANDWIDTH_SAMPLE_CAP = 3000


@dataclass(frozen=True)
class MeanShiftConfig:
    bandwidth: float = 0.0  # 0 selects adaptive_bandwidth
    max_iterations: int = 100
    convergence_tol: float = 1e-3
    merge_tol: float | None = None  # None means bandwidth / 2
    percentile: float = BANDWIDTH_PERCENTILE  # for the adaptive bandwidth

    def __post_init__(self):
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be >= 1")
        if self.convergence_tol <= 0 or (self.merge_tol is not None and self.merge_tol <= 0):
            raise DomainError("tolerances must be positive")
        if self.bandwidth < 0:
            raise DomainError("bandwidth must be >= 0")
        if not 0 < self.percentile <= 100:
            raise DomainError("percentile must lie in (0, 100]")


@dataclass(frozen=True, eq=False)
class Cluster:
    center: tuple[int, int]
    members: np.ndarray
    mode: tuple[float, float] = (0.0, 0.0)

    @property
    def gain(self) -> int:
        return len(self.members)

    def __repr__(self):
        return f"Cluster(center={self.center}, gain={self.gain})"


def adaptive_bandwidth(points, percentile: float = BANDWIDTH_PERCENTILE) -> float:
    """Nearest-rank percentile of the pairwise Euclidean distances."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 2:
        raise DomainError("adaptive bandwidth needs at least two points")
    if len(pts) > BANDWIDTH_SAMPLE_CAP:
        pts = pts[np.linspace(0, len(pts) - 1, BANDWIDTH_SAMPLE_CAP).astype(int)]
    d = pdist(pts)
    rank = max(1, math.ceil(percentile / 100.0 * len(d)))
    value = float(np.partition(d, rank - 1)[rank - 1])
    if value > 0.0:
        return value
    positive = d[d > 0.0]
    # every point coincides: any positive bandwidth yields one cluster
    return float(positive.min()) if len(positive) else 1.0


def snap_center(raw_mode, members) -> tuple[int, int]:
    """Member nearest to ``raw_mode``; ties go to the first in row-major order."""
    m = np.asarray(members, dtype=np.int64).reshape(-1, 2)
    if len(m) == 0:
        raise DomainError("cannot snap onto an empty member list")
    order = np.lexsort((m[:, 0], m[:, 1]))
    m = m[order]
    d2 = ((m - np.asarray(raw_mode, dtype=np.float64)) ** 2).sum(axis=1)
    i = int(np.argmin(d2))
    return int(m[i, 0]), int(m[i, 1])


def _seek_modes(pts: np.ndarray, bandwidth: float, cfg: MeanShiftConfig) -> np.ndarray:
    modes = pts.copy()
    active = np.arange(len(pts))
    r2 = bandwidth * bandwidth
    sq = (pts ** 2).sum(axis=1)
    for _ in range(cfg.max_iterations):
        if len(active) == 0:
            break
        cur = modes[active]
        new = np.empty_like(cur)
        for lo in range(0, len(cur), 512):
            chunk = cur[lo:lo + 512]
            d2 = (chunk ** 2).sum(axis=1)[:, None] + sq[None, :] - 2.0 * (chunk @ pts.T)
            # slack keeps points exactly on the kernel boundary inside despite rounding
            within = (d2 <= r2 + 1e-9).astype(np.float64)
            new[lo:lo + 512] = within @ pts / within.sum(axis=1, keepdims=True)
        shift = np.sqrt(((new - cur) ** 2).sum(axis=1))
        modes[active] = new
        active = active[shift >= cfg.convergence_tol]
    return modes


def mean_shift(points, config: MeanShiftConfig | None = None) -> list[Cluster]:
    cfg = config or MeanShiftConfig()
    pts_i = np.asarray(points, dtype=np.int64).reshape(-1, 2)
    if len(pts_i) == 0:
        raise DomainError("mean shift needs at least one point")
    if len(pts_i) == 1:
        c = (int(pts_i[0, 0]), int(pts_i[0, 1]))
        return [Cluster(c, pts_i.copy(), (float(c[0]), float(c[1])))]
    pts = pts_i.astype(np.float64)
    bandwidth = cfg.bandwidth or adaptive_bandwidth(pts, cfg.percentile)
    merge_tol = cfg.merge_tol if cfg.merge_tol is not None else bandwidth / 2.0
    modes = _seek_modes(pts, bandwidth, cfg)

    reps: list[np.ndarray] = []
    labels = np.empty(len(pts), dtype=np.int64)
    for i, m in enumerate(modes):
        for k, r in enumerate(reps):
            if math.hypot(m[0] - r[0], m[1] - r[1]) <= merge_tol:
                labels[i] = k
                break
        else:
            labels[i] = len(reps)
            reps.append(m)

    clusters = []
    for k in range(len(reps)):
        idx = labels == k
        mode = modes[idx].mean(axis=0)
        members = pts_i[idx]
        clusters.append(Cluster(snap_center(mode, members), members,
                                (float(mode[0]), float(mode[1]))))
    return clusters
