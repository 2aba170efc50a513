from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from hierexplore.errors import (BadMagicError, CoordinateOutOfBoundsError, DecodeError,
                                FormatError, TruncatedPayloadError)
from hierexplore.frontier import (FrontierSet, SparseFrontierMap, decode_sparse, dense_size,
                                  detect_frontiers, encode_sparse, merge_frontiers,
                                  payload_size, reconstruct_grid)
from hierexplore.gridmap import (FREE, OCCUPIED, UNKNOWN, Pose, close_free_space, fuse_tristate,
                                 grid_from_text)

import oracles

FIXTURES = Path(__file__).parent / "fixtures"
tristate = arrays(np.uint8, st.tuples(st.integers(1, 14), st.integers(1, 14)),
                  elements=st.sampled_from([0, 1, 2]))


def as_sets(fs: FrontierSet):
    return {tuple(c) for c in fs.f_un.tolist()}, {tuple(c) for c in fs.f_occ.tolist()}


def random_map(rng, max_side=40, max_cells=60) -> SparseFrontierMap:
    w, h = (int(v) for v in rng.integers(1, max_side, 2))
    n_un, n_occ = (int(v) for v in rng.integers(0, max_cells, 2))
    un = np.column_stack([rng.integers(0, w, n_un), rng.integers(0, h, n_un)])
    occ = np.column_stack([rng.integers(0, w, n_occ), rng.integers(0, h, n_occ)])
    pose = Pose(int(rng.integers(w)), int(rng.integers(h)), int(rng.integers(0, 8)))
    return SparseFrontierMap(w, h, float(rng.integers(1, 200_000)) / 1e6, pose, un, occ)


# -- detection ------------------------------------------------------------------

def test_detect_pair():
    fs = detect_frontiers(np.array([[FREE, UNKNOWN]], np.uint8))
    assert as_sets(fs) == ({(0, 0)}, set())


def test_detect_all_free():
    assert len(detect_frontiers(np.zeros((5, 4), np.uint8))) == 0


def test_detect_both_labels():
    g = grid_from_text("3 1\n?.#\n")
    assert as_sets(detect_frontiers(g)) == ({(1, 0)}, {(1, 0)})


@given(tristate)
def test_detect_matches_brute_force(grid):
    assert as_sets(detect_frontiers(grid)) == oracles.frontiers_brute(grid)


@given(tristate, st.integers(0, 3))
def test_detect_invariant_under_probability_relabelling(grid, shift):
    # classifications that agree give identical frontiers regardless of source probabilities
    from hierexplore.gridmap import OccupancyGrid, SensorModel, classify
    rng = np.random.default_rng(shift)
    lo = np.where(grid == FREE, rng.uniform(0, 0.35, grid.shape),
                  np.where(grid == OCCUPIED, rng.uniform(0.65, 1, grid.shape), 0.5))
    g = OccupancyGrid(grid.shape[1], grid.shape[0], probs=lo)
    assert detect_frontiers(classify(g, SensorModel())) == detect_frontiers(grid)


def test_frontier_set_is_canonical():
    a = FrontierSet([(3, 1), (0, 2), (3, 1)], [])
    assert a.f_un.tolist() == [[3, 1], [0, 2]]
    assert a == FrontierSet([(0, 2), (3, 1)])


# -- codec ------------------------------------------------------------------------

def test_payload_sizes():
    m = SparseFrontierMap(10, 10, 0.05, Pose(0, 0), np.zeros((0, 2)), np.zeros((0, 2)))
    assert len(encode_sparse(m)) == 24 == payload_size(0, 0)
    m = SparseFrontierMap(10, 10, 0.05, Pose(0, 0), [(i, 0) for i in range(10)], np.zeros((0, 2)))
    assert len(encode_sparse(m)) == 24 + 40
    assert dense_size(10, 10) == 124


def test_round_trip_random():
    rng = np.random.default_rng(11)
    for _ in range(300):
        m = random_map(rng)
        data = encode_sparse(m)
        assert len(data) == payload_size(len(m.f_un), len(m.f_occ))
        assert decode_sparse(data) == m


GOLDEN = {
    "golden_empty.bin": SparseFrontierMap(4, 3, 0.05, Pose(1, 1, 0), np.zeros((0, 2)),
                                          np.zeros((0, 2))),
    "golden_unknown_only.bin": SparseFrontierMap(8, 6, 0.05, Pose(2, 3, 1),
                                                 [(3, 1), (0, 0), (1, 1)], np.zeros((0, 2))),
    "golden_mixed.bin": SparseFrontierMap(16, 16, 0.1, Pose(5, 5, 2), [(6, 2), (5, 2)],
                                          [(9, 9), (2, 6), (2, 5)]),
}


@pytest.mark.parametrize("name", sorted(GOLDEN))
def test_golden_bytes(name):
    data = (FIXTURES / name).read_bytes()
    assert encode_sparse(GOLDEN[name]) == data
    assert decode_sparse(data) == GOLDEN[name]


def test_decode_errors():
    good = (FIXTURES / "golden_mixed.bin").read_bytes()
    with pytest.raises(BadMagicError):
        decode_sparse(b"XFM1" + good[4:])
    with pytest.raises(TruncatedPayloadError):
        decode_sparse(good[:-2])
    with pytest.raises(TruncatedPayloadError):
        decode_sparse(good[:10])
    with pytest.raises(DecodeError):
        decode_sparse(good + b"\0")
    bad = bytearray(good)
    bad[24:26] = (40).to_bytes(2, "little")  # x beyond a 16-wide grid
    with pytest.raises(CoordinateOutOfBoundsError):
        decode_sparse(bytes(bad))
    # the three decode errors are distinct types
    assert len({BadMagicError, TruncatedPayloadError, CoordinateOutOfBoundsError}) == 3


def test_encode_errors():
    with pytest.raises(FormatError):
        encode_sparse(SparseFrontierMap(70_000, 2, 0.05, Pose(0, 0), np.zeros((0, 2)),
                                        np.zeros((0, 2))))
    with pytest.raises(FormatError):
        encode_sparse(SparseFrontierMap(4, 4, 0.05, Pose(0, 0), [(4, 0)], np.zeros((0, 2))))


# -- reconstruction ----------------------------------------------------------------

def ring(side=9, lo=2, hi=6):
    cells = [(x, y) for x in range(lo, hi + 1) for y in range(lo, hi + 1)
             if x in (lo, hi) or y in (lo, hi)]
    return FrontierSet(np.zeros((0, 2)), cells)


def test_reconstruct_occupied_ring():
    g = reconstruct_grid(ring(), Pose(4, 4), 9, 9)
    assert np.all(g[2:7, 2:7] == FREE)
    # the band beyond the ring is occupied, apart from the diagonal corners
    assert g[1, 4] == OCCUPIED and g[4, 7] == OCCUPIED and g[7, 3] == OCCUPIED
    assert g[0, 0] == UNKNOWN and g[8, 8] == UNKNOWN
    assert detect_frontiers(g) == ring()


def test_reconstruct_empty_set_fills_everything():
    g = reconstruct_grid(FrontierSet(), (0, 0), 5, 4)
    assert np.all(g == FREE)


def test_reconstruct_seed_out_of_bounds():
    from hierexplore.errors import DomainError
    with pytest.raises(DomainError):
        reconstruct_grid(FrontierSet(), (5, 0), 5, 4)


def test_reconstruct_does_not_cross_closed_contour():
    # two separate rings; the seed sits in the first, the second stays non-free inside
    a = ring(lo=1, hi=5)
    b = ring(lo=9, hi=13)
    both = FrontierSet(np.zeros((0, 2)), np.concatenate([a.f_occ, b.f_occ]))
    g = reconstruct_grid(both, (3, 3), 16, 16)
    assert np.all(g[2:5, 2:5] == FREE)
    assert np.all(g[10:13, 10:13] != FREE)


def test_reconstruct_unknown_band():
    cells = [(x, y) for x in range(2, 7) for y in range(2, 7) if x in (2, 6) or y in (2, 6)]
    fs = FrontierSet(cells, np.zeros((0, 2)))
    g = reconstruct_grid(fs, (4, 4), 9, 9)
    assert g[1, 4] == UNKNOWN and g[4, 1] == UNKNOWN
    assert detect_frontiers(g) == fs


def room_grid():
    return grid_from_text("""12 8
????????????
?#########??
?#........#?
?#........??
?#....#...#?
?#....#...#?
?##########?
????????????
""")


def test_reconstruct_fixpoint_on_room():
    g = close_free_space(room_grid())
    fs = detect_frontiers(g)
    rebuilt = reconstruct_grid(fs, (3, 3), 12, 8)
    assert detect_frontiers(rebuilt) == fs


def test_reconstruct_recovers_pocket_behind_doorway():
    # the lower-right room is only reachable through frontier cells of a door
    g = grid_from_text("""9 9
#########
#.......#
#.......#
#.......#
###...###
????....#
????....#
????....#
?????####
""")
    assert np.array_equal(close_free_space(g), g)
    fs = detect_frontiers(g)
    rebuilt = reconstruct_grid(fs, (4, 2), 9, 9)
    assert rebuilt[6, 6] == FREE
    assert detect_frontiers(rebuilt) == fs


# -- merge ----------------------------------------------------------------------------

@given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9)), max_size=12),
       st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9)), max_size=12),
       st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9)), max_size=12))
def test_merge_set_algebra(a, b, c):
    A, B, C = FrontierSet(a, b), FrontierSet(b, c), FrontierSet(c, a)
    assert merge_frontiers([A, A]) == A
    assert merge_frontiers([A, B]) == merge_frontiers([B, A])
    assert merge_frontiers([merge_frontiers([A, B]), C]) == merge_frontiers([A, merge_frontiers([B, C])])


def test_merge_disjoint_is_union():
    A = FrontierSet([(0, 0)], [(1, 1)])
    B = FrontierSet([(2, 2)], [(3, 3)])
    m = merge_frontiers([A, B])
    assert as_sets(m) == ({(0, 0), (2, 2)}, {(1, 1), (3, 3)})


def test_merge_overlapping_exploration_matches_merged_grid():
    truth = room_grid()
    truth[truth == UNKNOWN] = OCCUPIED
    # robot A saw the left half, robot B the right half, with overlap in the middle
    a = np.full_like(truth, UNKNOWN)
    a[:, :7] = truth[:, :7]
    b = np.full_like(truth, UNKNOWN)
    b[:, 4:] = truth[:, 4:]
    sets, grids = [], []
    for view, seed in ((a, (3, 3)), (b, (8, 3))):
        fs = detect_frontiers(close_free_space(view))
        sets.append(fs)
        grids.append(reconstruct_grid(fs, seed, 12, 8))
    merged = merge_frontiers(sets, grids)
    assert merged == detect_frontiers(fuse_tristate(grids))
    assert len(merged.f_un) < len(sets[0].f_un) + len(sets[1].f_un)
