import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist

from hierexplore.cluster import (Cluster, MeanShiftConfig, adaptive_bandwidth, mean_shift,
                                 snap_center)
from hierexplore.errors import DomainError

import oracles

cells = st.lists(st.tuples(st.integers(0, 30), st.integers(0, 30)), min_size=1, max_size=40)


def test_bandwidth_single_pair():
    assert adaptive_bandwidth([(0, 0), (0, 3)]) == 3.0


def test_bandwidth_collinear_nearest_rank():
    pts = [(i, 0) for i in range(10)]
    d = sorted(abs(i - j) for i in range(10) for j in range(i + 1, 10))
    assert len(d) == 45
    assert adaptive_bandwidth(pts) == d[math.ceil(0.15 * 45) - 1]


def test_bandwidth_zero_percentile_falls_back():
    pts = [(2, 2)] * 9 + [(5, 6)]
    assert adaptive_bandwidth(pts) == 5.0


def test_bandwidth_needs_two_points():
    with pytest.raises(DomainError):
        adaptive_bandwidth([(1, 1)])


def test_config_validation():
    for kw in [dict(max_iterations=0), dict(convergence_tol=0), dict(merge_tol=-1),
               dict(bandwidth=-1), dict(percentile=0)]:
        with pytest.raises(DomainError):
            MeanShiftConfig(**kw)


def test_single_point():
    (c,) = mean_shift([(4, 7)])
    assert c.center == (4, 7) and c.gain == 1


def test_two_blobs_match_connected_components():
    rng = np.random.default_rng(3)
    a = rng.integers(0, 4, size=(15, 2))
    b = rng.integers(0, 4, size=(15, 2)) + [100, 0]
    pts = np.unique(np.vstack([a, b]), axis=0)
    clusters = mean_shift(pts, MeanShiftConfig(bandwidth=5))
    assert len(clusters) == 2
    n, labels = connected_components(cdist(pts, pts) <= 5, directed=False)
    assert n == 2
    for c in clusters:
        idx = [int(np.flatnonzero((pts == m).all(axis=1))[0]) for m in c.members]
        assert len(set(labels[idx])) == 1 and len(idx) == (labels == labels[idx[0]]).sum()


def test_uniform_blob_converges_to_centroid():
    pts = [(x, y) for x in range(3) for y in range(3)]
    cfg = MeanShiftConfig(bandwidth=10)
    (c,) = mean_shift(pts, cfg)
    assert math.dist(c.mode, (1.0, 1.0)) <= cfg.convergence_tol
    assert c.center == (1, 1)


@given(cells)
def test_clusters_partition_points(pts):
    clusters = mean_shift(pts)
    got = sorted(tuple(m) for c in clusters for m in c.members.tolist())
    assert got == sorted(pts)
    for c in clusters:
        assert c.gain == len(c.members) >= 1
        assert list(c.center) in c.members.tolist()


@given(cells)
def test_deterministic(pts):
    a = mean_shift(pts)
    b = mean_shift(pts)
    assert [(c.center, c.members.tolist()) for c in a] == [(c.center, c.members.tolist()) for c in b]


def test_modes_match_loop_oracle():
    rng = np.random.default_rng(0)
    pts = np.unique(rng.integers(0, 25, size=(40, 2)), axis=0)
    cfg = MeanShiftConfig(bandwidth=4.0)
    want = oracles.mean_shift_loop(pts, 4.0, cfg.convergence_tol)
    clusters = mean_shift(pts, cfg)
    for c in clusters:
        for m in c.members:
            i = int(np.flatnonzero((pts == m).all(axis=1))[0])
            assert math.dist(want[i], c.mode) <= cfg.bandwidth / 2 + 0.01


def test_snap_examples():
    assert snap_center((2.0, 0.0), [(0, 0), (2, 0)]) == (2, 0)
    assert snap_center((0.6, 0.0), [(0, 0), (2, 0)]) == (0, 0)
    # equidistant: row-major order, so (1, 0) before (0, 1)
    assert snap_center((0.0, 0.0), [(0, 1), (1, 0)]) == (1, 0)
    with pytest.raises(DomainError):
        snap_center((0, 0), [])


@given(st.tuples(st.floats(-5, 35), st.floats(-5, 35)), cells)
def test_snap_matches_linear_scan(mode, members):
    best = None
    for x, y in sorted(members, key=lambda c: (c[1], c[0])):
        d = (x - mode[0]) ** 2 + (y - mode[1]) ** 2
        if best is None or d < best[0]:
            best = (d, (x, y))
    assert snap_center(mode, members) == best[1]


def test_cluster_repr_mentions_gain():
    assert "gain=2" in repr(Cluster((0, 0), np.array([[0, 0], [1, 0]])))
