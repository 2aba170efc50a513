"""Frontier detection, the sparse frontier wire format, and grid reconstruction.

Frontier coordinates are ``(n, 2)`` int64 arrays of ``(x, y)`` rows kept
unique and sorted row-major (by ``y`` then ``x``), so equal sets compare
equal as arrays and encode to identical bytes.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from . import kernels
from .errors import (BadMagicError, CoordinateOutOfBoundsError, DecodeError, DomainError,
                     FormatError, TruncatedPayloadError)
from .gridmap import (FREE, OCCUPIED, UNKNOWN, Pose, close_free_space, fuse_tristate,
                      split_channels)

MAGIC = b"SFM1"
VERSION = 1
HEADER = struct.Struct("<4sHHHIHHHHH")
HEADER_SIZE = HEADER.size  # 24
COORD_SIZE = 4
MAX_COUNT = 0xFFFF

_CROSS = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=np.int32)


def canonical_coords(coords) -> np.ndarray:
    """Unique ``(x, y)`` rows sorted row-major."""
    arr = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    if len(arr) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    arr = np.unique(arr, axis=0)
    order = np.lexsort((arr[:, 0], arr[:, 1]))
    return np.ascontiguousarray(arr[order])


def coords_to_mask(coords: np.ndarray, width: int, height: int) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    if len(coords):
        mask[coords[:, 1], coords[:, 0]] = True
    return mask


def mask_to_coords(mask: np.ndarray) -> np.ndarray:
    ys, xs = np.nonzero(mask)  # already row-major
    return np.stack([xs, ys], axis=1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class FrontierSet:
    f_un: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    f_occ: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    def __post_init__(self):
        object.__setattr__(self, "f_un", canonical_coords(self.f_un))
        object.__setattr__(self, "f_occ", canonical_coords(self.f_occ))

    def __eq__(self, other):
        if not isinstance(other, FrontierSet):
            return NotImplemented
        return np.array_equal(self.f_un, other.f_un) and np.array_equal(self.f_occ, other.f_occ)

    def __len__(self):
        return len(self.f_un) + len(self.f_occ)

    def all_cells(self) -> np.ndarray:
        return canonical_coords(np.concatenate([self.f_un, self.f_occ]))


@dataclass(frozen=True, eq=False)
class SparseFrontierMap:
    width: int
    height: int
    resolution: float
    pose: Pose
    f_un: np.ndarray
    f_occ: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "f_un", canonical_coords(self.f_un))
        object.__setattr__(self, "f_occ", canonical_coords(self.f_occ))

    @classmethod
    def from_frontiers(cls, frontiers: FrontierSet, pose: Pose, width: int, height: int,
                       resolution: float = 0.05) -> "SparseFrontierMap":
        return cls(width, height, resolution, pose, frontiers.f_un, frontiers.f_occ)

    @property
    def frontiers(self) -> FrontierSet:
        return FrontierSet(self.f_un, self.f_occ)

    def __eq__(self, other):
        if not isinstance(other, SparseFrontierMap):
            return NotImplemented
        return (self.width == other.width and self.height == other.height
                and self.resolution == other.resolution and self.pose == other.pose
                and np.array_equal(self.f_un, other.f_un)
                and np.array_equal(self.f_occ, other.f_occ))


def detect_frontiers(grid: np.ndarray) -> FrontierSet:
    """Free cells 4-adjacent to unknown (``f_un``) or occupied (``f_occ``) cells."""
    unknown, occupied, free = split_channels(grid)
    near_un = ndimage.convolve(unknown.astype(np.int32), _CROSS, mode="constant", cval=0)
    near_occ = ndimage.convolve(occupied.astype(np.int32), _CROSS, mode="constant", cval=0)
    return FrontierSet(mask_to_coords(free & (near_un > 0)),
                       mask_to_coords(free & (near_occ > 0)))


# -- wire format --------------------------------------------------------------

def payload_size(n_un: int, n_occ: int) -> int:
    return HEADER_SIZE + COORD_SIZE * (n_un + n_occ)


def dense_size(width: int, height: int) -> int:
    """Bytes for the dense occupancy-grid baseline (one byte per cell + header)."""
    return HEADER_SIZE + width * height


def encode_sparse(m: SparseFrontierMap) -> bytes:
    for name, v in (("width", m.width), ("height", m.height), ("robot_id", m.pose.robot_id)):
        if not 0 <= v <= 0xFFFF:
            raise FormatError(f"{name}={v} does not fit in u16")
    micro = int(round(m.resolution * 1e6))
    if not 0 <= micro <= 0xFFFFFFFF:
        raise FormatError(f"resolution {m.resolution} does not fit in u32 micrometers")
    if not (0 <= m.pose.x < m.width and 0 <= m.pose.y < m.height):
        raise FormatError("pose outside grid")
    for coords in (m.f_un, m.f_occ):
        if len(coords) > MAX_COUNT:
            raise FormatError(f"{len(coords)} coordinates exceed the u16 count field")
        if len(coords) and (coords.min() < 0 or coords[:, 0].max() >= m.width
                            or coords[:, 1].max() >= m.height):
            raise FormatError("frontier coordinate outside grid")
    head = HEADER.pack(MAGIC, VERSION, m.width, m.height, micro, m.pose.robot_id,
                       m.pose.x, m.pose.y, len(m.f_un), len(m.f_occ))
    body = np.concatenate([m.f_un, m.f_occ]).astype("<u2").tobytes()
    return head + body


def decode_sparse(data: bytes) -> SparseFrontierMap:
    data = bytes(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}")
    if len(data) < HEADER_SIZE:
        raise TruncatedPayloadError(f"header needs {HEADER_SIZE} bytes, got {len(data)}")
    _, version, w, h, micro, rid, px, py, n_un, n_occ = HEADER.unpack_from(data)
    if version != VERSION:
        raise DecodeError(f"unsupported version {version}")
    need = payload_size(n_un, n_occ)
    if len(data) < need:
        raise TruncatedPayloadError(f"payload needs {need} bytes, got {len(data)}")
    if len(data) > need:
        raise DecodeError(f"{len(data) - need} trailing bytes after payload")
    if not (px < w and py < h):
        raise CoordinateOutOfBoundsError(f"pose ({px}, {py}) outside {w}x{h}")
    coords = np.frombuffer(data, dtype="<u2", offset=HEADER_SIZE).astype(np.int64).reshape(-1, 2)
    if len(coords) and (coords[:, 0].max() >= w or coords[:, 1].max() >= h):
        raise CoordinateOutOfBoundsError(f"frontier coordinate outside {w}x{h}")
    return SparseFrontierMap(w, h, micro / 1e6, Pose(px, py, rid), coords[:n_un], coords[n_un:])


# -- reconstruction ----------------------------------------------------------

def _neighbour_any(mask: np.ndarray) -> np.ndarray:
    """True where any 4-neighbour is set."""
    out = np.zeros_like(mask)
    out[1:, :] |= mask[:-1, :]
    out[:-1, :] |= mask[1:, :]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    return out


def _touches_border(mask: np.ndarray) -> bool:
    return bool(mask[0].any() or mask[-1].any() or mask[:, 0].any() or mask[:, -1].any())


def _forced_free(contour: np.ndarray, un_mask: np.ndarray, occ_mask: np.ndarray) -> np.ndarray:
    """Non-contour cells whose frontier neighbours fit neither Unknown nor Occupied.

    An Unknown cell makes every frontier neighbour unknown-facing and an
    Occupied one makes every neighbour occupied-facing, so a cell next to both
    an occupied-only and an unknown-only frontier cell must be free.
    """
    return (~contour & _neighbour_any(contour & ~un_mask)
            & _neighbour_any(contour & ~occ_mask))


def _interior_fill(contour: np.ndarray, un_mask: np.ndarray, occ_mask: np.ndarray,
                   seed: tuple[int, int]) -> np.ndarray:
    """Free region enclosed by the contour: the seed's component plus forced pockets.

    Non-contour cells split into 4-connected components that are uniformly
    free or non-free, since a free cell beside a non-free one is a frontier.
    Pockets cut off by frontier cells at doorways are recovered through
    :func:`_forced_free`.
    """
    labels, _ = ndimage.label(~contour)
    forced_labels = np.unique(labels[_forced_free(contour, un_mask, occ_mask)])
    pockets = np.isin(labels, forced_labels[forced_labels > 0])
    x0, y0 = seed
    if not contour[y0, x0]:
        return kernels.scanline_fill(contour, seed) | pockets
    # The robot stands on a frontier cell: try the open cells around it.
    h, w = contour.shape
    for r in range(1, 4):
        regions = []
        seen = np.zeros_like(contour, dtype=bool)
        for y in range(max(0, y0 - r), min(h, y0 + r + 1)):
            for x in range(max(0, x0 - r), min(w, x0 + r + 1)):
                if contour[y, x] or seen[y, x]:
                    continue
                region = kernels.scanline_fill(contour, (x, y))
                seen |= region
                regions.append(region)
        if regions:
            if any((g & pockets).any() for g in regions):
                return pockets
            inside = [g for g in regions if not _touches_border(g)]
            if inside:
                return max(inside, key=lambda g: int(g.sum())) | pockets
    return pockets


def paint_outer_band(out: np.ndarray, un_mask: np.ndarray, occ_mask: np.ndarray,
                     closing_radius: int = 1) -> None:
    """Label the non-free cells of ``out`` as Occupied or Unknown, in place.

    A cell may be Occupied only if all its frontier neighbours are
    occupied-facing and Unknown only if all are unknown-facing.  Cells with a
    single option take it.  Cells that closing would turn Free are made
    Occupied where allowed, and each occupied-facing cell lacking an Occupied
    neighbour gets one, preferring a cell that no unknown-facing cell relies
    on.  Everything else stays Unknown.
    """
    free = out == FREE
    contour = un_mask | occ_mask
    can_un = ~free & ~_neighbour_any(contour & ~un_mask)
    can_occ = ~free & ~_neighbour_any(contour & ~occ_mask)
    band = ~free & _neighbour_any(contour)
    probe = np.where(free, FREE, UNKNOWN).astype(np.uint8)
    would_fill = (close_free_space(probe, closing_radius) == FREE) & ~free
    out[~free] = UNKNOWN
    out[can_occ & (would_fill | (band & ~can_un))] = OCCUPIED

    h, w = out.shape
    steps = ((1, 0), (-1, 0), (0, 1), (0, -1))

    def inside(x, y):
        return 0 <= x < w and 0 <= y < h

    def unknown_relied_on(x, y):
        # some unknown-facing neighbour has no other Unknown neighbour
        for dx, dy in steps:
            gx, gy = x + dx, y + dy
            if not inside(gx, gy) or not un_mask[gy, gx]:
                continue
            others = sum(1 for ex, ey in steps
                         if inside(gx + ex, gy + ey) and (gx + ex, gy + ey) != (x, y)
                         and out[gy + ey, gx + ex] == UNKNOWN)
            if others == 0:
                return True
        return False

    lacking = occ_mask & ~_neighbour_any(out == OCCUPIED)
    for y, x in zip(*np.nonzero(lacking)):
        options = [(x + dx, y + dy) for dx, dy in steps
                   if inside(x + dx, y + dy) and can_occ[y + dy, x + dx]
                   and out[y + dy, x + dx] == UNKNOWN]
        if not options:
            continue
        safe = [p for p in options if not unknown_relied_on(*p)]
        nx, ny = (safe or options)[0]
        out[ny, nx] = OCCUPIED


def reconstruct_grid(frontiers: FrontierSet, seed: Pose | tuple[int, int], width: int,
                     height: int, closing_radius: int = 1) -> np.ndarray:
    """Rebuild a tri-state grid from a frontier contour and a seed inside it."""
    sx, sy = (seed.x, seed.y) if isinstance(seed, Pose) else seed
    if not (0 <= sx < width and 0 <= sy < height):
        raise DomainError(f"seed ({sx}, {sy}) outside {width}x{height}")
    un_mask = coords_to_mask(frontiers.f_un, width, height)
    occ_mask = coords_to_mask(frontiers.f_occ, width, height)
    contour = un_mask | occ_mask
    out = np.full((height, width), UNKNOWN, dtype=np.uint8)
    out[_interior_fill(contour, un_mask, occ_mask, (sx, sy))] = FREE
    out[contour] = FREE
    paint_outer_band(out, un_mask, occ_mask, closing_radius)
    return close_free_space(out, closing_radius)


def merge_frontiers(sets: Sequence[FrontierSet],
                    grids: Sequence[np.ndarray] | None = None) -> FrontierSet:
    """Union per label; with per-robot reconstructions, drop cells other robots resolved.

    A cell is kept only while it is still a frontier of that label on the
    fused reconstruction (free wins, then occupied), so a cell whose unknown
    neighbours another robot has observed leaves ``f_un``, and interior free
    space seen by any robot leaves both sets.
    """
    if not sets:
        return FrontierSet()
    un = canonical_coords(np.concatenate([s.f_un for s in sets]))
    occ = canonical_coords(np.concatenate([s.f_occ for s in sets]))
    if grids is None:
        return FrontierSet(un, occ)
    if len(grids) != len(sets):
        raise DomainError("one reconstructed grid per frontier set is required")
    fused = detect_frontiers(fuse_tristate(grids))
    h, w = grids[0].shape
    still_un = coords_to_mask(fused.f_un, w, h)
    still_occ = coords_to_mask(fused.f_occ, w, h)
    keep_un = still_un[un[:, 1], un[:, 0]] if len(un) else np.zeros(0, bool)
    keep_occ = still_occ[occ[:, 1], occ[:, 0]] if len(occ) else np.zeros(0, bool)
    return FrontierSet(un[keep_un], occ[keep_occ])
