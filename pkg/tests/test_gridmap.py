import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from hierexplore.errors import DomainError
from hierexplore.gridmap import (FREE, OCCUPIED, UNKNOWN, OccupancyGrid, SensorModel, classify,
                                 close_free_space, coverage, dilate, erode, fuse_probabilities,
                                 fuse_tristate, grid_from_text, grid_to_text, merge_channels,
                                 split_channels, update_cell_occupancy)

import oracles

probs = st.floats(0.001, 0.999)
tristate = arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12)),
                  elements=st.sampled_from([0, 1, 2]))


# -- fusion -------------------------------------------------------------------

@pytest.mark.parametrize("prev, meas, prior, want", [
    (0.5, 0.7, 0.5, 0.7),
    (0.7, 0.5, 0.5, 0.7),
    (0.7, 0.7, 0.5, 49 / 58),
])
def test_update_examples(prev, meas, prior, want):
    assert update_cell_occupancy(prev, meas, prior) == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize("bad", [(0.0, 0.5, 0.5), (0.5, 1.0, 0.5), (0.5, 0.5, 0.0),
                                 (float("nan"), 0.5, 0.5)])
def test_update_rejects_degenerate(bad):
    with pytest.raises(DomainError):
        update_cell_occupancy(*bad)


@given(probs, probs, probs)
def test_update_matches_odds_oracle(prev, meas, prior):
    got = update_cell_occupancy(prev, meas, prior)
    assert got == pytest.approx(oracles.odds_fusion(prev, meas, prior), rel=1e-12)


@given(probs, probs)
def test_measurement_equal_to_prior_is_identity(prev, prior):
    assert update_cell_occupancy(prev, prior, prior) == pytest.approx(prev, rel=1e-12)


@given(st.lists(probs, min_size=1, max_size=8), probs, st.randoms())
def test_fold_is_permutation_invariant(seq, prior, rnd):
    def fold(ms):
        p = prior
        for m in ms:
            p = update_cell_occupancy(p, m, prior)
        return p
    shuffled = list(seq)
    rnd.shuffle(shuffled)
    a, b = fold(seq), fold(shuffled)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-300)


def test_vectorised_fusion_matches_scalar():
    rng = np.random.default_rng(3)
    prev, meas = rng.uniform(0.01, 0.99, (2, 500))
    vec = fuse_probabilities(prev, meas, 0.4)
    scal = [update_cell_occupancy(p, m, 0.4) for p, m in zip(prev, meas)]
    np.testing.assert_allclose(vec, scal, rtol=1e-12)


def test_grid_fuse_clamps():
    model = SensorModel()
    g = OccupancyGrid.blank(3, 1, model=model)
    for _ in range(30):
        g.fuse([0, 2], [0, 0], [True, False], model)
    assert g.probs[0, 0] == 0.99 and g.probs[0, 2] == 0.01
    assert g.probs[0, 1] == 0.5


def test_sensor_model_invariants():
    with pytest.raises(DomainError):
        SensorModel(p_hit=0.4)
    with pytest.raises(DomainError):
        SensorModel(free_threshold=0.7, occ_threshold=0.6)


def test_grid_shape_and_range_checked():
    with pytest.raises(DomainError):
        OccupancyGrid(2, 2, probs=np.zeros((3, 2)))
    with pytest.raises(DomainError):
        OccupancyGrid(1, 1, probs=[[1.5]])


# -- classification -------------------------------------------------------------

def test_classify_all_unknown_at_half():
    g = OccupancyGrid(4, 3)
    assert np.all(classify(g, SensorModel()) == UNKNOWN)


def test_classify_boundaries_inclusive():
    g = OccupancyGrid(2, 1, probs=[[0.65, 0.35]])
    assert classify(g, SensorModel()).tolist() == [[OCCUPIED, FREE]]


def test_classify_matches_per_cell_rule():
    rng = np.random.default_rng(0)
    model = SensorModel()
    for _ in range(20):
        p = rng.random((9, 7))
        p[rng.random(p.shape) < 0.1] = 0.65
        got = classify(OccupancyGrid(7, 9, probs=p), model)
        want = [[oracles.classify_cell(v, 0.35, 0.65) for v in row] for row in p]
        assert got.tolist() == want


# -- morphology ------------------------------------------------------------------

def test_close_all_free_unchanged():
    g = np.full((5, 6), FREE, np.uint8)
    assert np.array_equal(close_free_space(g), g)


def test_close_fills_single_hole():
    g = np.full((5, 5), FREE, np.uint8)
    g[2, 2] = UNKNOWN
    assert np.all(close_free_space(g, 1) == FREE)


def test_close_never_overwrites_occupied():
    g = np.full((5, 5), FREE, np.uint8)
    g[2, 2] = OCCUPIED
    assert close_free_space(g)[2, 2] == OCCUPIED


def test_close_leaves_map_edge():
    g = np.full((4, 5), FREE, np.uint8)
    g[0, 2] = UNKNOWN
    assert close_free_space(g)[0, 2] == UNKNOWN


def test_close_rejects_zero_radius():
    with pytest.raises(DomainError):
        close_free_space(np.zeros((3, 3), np.uint8), 0)


@given(tristate, st.integers(1, 2))
def test_single_ops_match_loops(grid, radius):
    mask = grid == FREE
    assert np.array_equal(dilate(mask, radius), oracles.dilate_loop(mask, radius))
    assert np.array_equal(erode(mask, radius), oracles.erode_loop(mask, radius))


@given(tristate, st.integers(1, 2))
def test_close_matches_composition_oracle(grid, radius):
    assert np.array_equal(close_free_space(grid, radius), oracles.close_loop(grid, radius))


@given(tristate, st.integers(1, 2))
def test_close_idempotent(grid, radius):
    once = close_free_space(grid, radius)
    assert np.array_equal(close_free_space(once, radius), once)


# -- channels, coverage, text ------------------------------------------------------

def test_split_all_unknown():
    un, occ, free = split_channels(np.full((2, 3), UNKNOWN, np.uint8))
    assert un.all() and not occ.any() and not free.any()


def test_split_mixed_one_hot():
    g = np.array([[FREE, OCCUPIED, UNKNOWN]], np.uint8)
    un, occ, free = split_channels(g)
    assert un.tolist() == [[False, False, True]]
    assert occ.tolist() == [[False, True, False]]
    assert free.tolist() == [[True, False, False]]


@given(tristate)
def test_split_partitions_and_round_trips(grid):
    masks = split_channels(grid)
    assert np.all(sum(m.astype(int) for m in masks) == 1)
    assert np.array_equal(merge_channels(*masks), grid)


def test_coverage_examples():
    truth = np.array([[FREE, OCCUPIED], [FREE, FREE]], np.uint8)
    assert coverage(truth, truth) == 1.0
    assert coverage(np.full_like(truth, UNKNOWN), truth) == 0.0
    half = truth.copy()
    half[1, :] = UNKNOWN
    assert coverage(half, truth) == 0.5


def test_coverage_errors():
    with pytest.raises(DomainError):
        coverage(np.zeros((2, 2), np.uint8), np.full((2, 2), UNKNOWN, np.uint8))
    with pytest.raises(DomainError):
        coverage(np.zeros((2, 2), np.uint8), np.zeros((3, 2), np.uint8))


def test_fuse_tristate_priority():
    a = np.array([[FREE, UNKNOWN, OCCUPIED]], np.uint8)
    b = np.array([[OCCUPIED, OCCUPIED, FREE]], np.uint8)
    assert fuse_tristate([a, b]).tolist() == [[FREE, OCCUPIED, FREE]]


@given(tristate)
def test_text_round_trip(grid):
    assert np.array_equal(grid_from_text(grid_to_text(grid)), grid)


def test_text_format():
    g = grid_from_text("3 2\n.#?\n??.\n")
    assert g.tolist() == [[FREE, OCCUPIED, UNKNOWN], [UNKNOWN, UNKNOWN, FREE]]
    with pytest.raises(DomainError):
        grid_from_text("3 2\n.#?\n")
    with pytest.raises(DomainError):
        grid_from_text("2 1\n.x\n")
