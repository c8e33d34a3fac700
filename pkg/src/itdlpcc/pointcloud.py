"""Voxelized point clouds, dense voxel blocks and block partitioning."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._rounding import round_half_away, round_half_away_int


def precision_for(points: np.ndarray) -> int:
    """Smallest bit depth p with every coordinate in [0, 2**p)."""
    if len(points) == 0:
        return 1
    return max(1, int(points.max()).bit_length())


def _merge_duplicates(points: np.ndarray, colors: np.ndarray | None):
    if len(points) == 0:
        return points.reshape(0, 3), None if colors is None else colors.reshape(0, 3)
    uniq, inverse, counts = np.unique(points, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    if colors is None:
        return uniq, None
    if len(uniq) == len(points):
        order = np.empty(len(points), dtype=np.int64)
        order[inverse] = np.arange(len(points))
        return uniq, colors[order]
    sums = np.zeros((len(uniq), 3), dtype=np.float64)
    np.add.at(sums, inverse, colors.astype(np.float64))
    mean = round_half_away(sums / counts[:, None])
    return uniq, np.clip(mean, 0, 255).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Integer voxel coordinates, optional 8-bit RGB, and coordinate precision.

    Instances built through :meth:`from_points` are canonical: duplicates are
    merged and points are sorted lexicographically, so two clouds holding the
    same set compare equal with ``==``.
    """

    points: np.ndarray
    colors: np.ndarray | None = None
    precision: int = field(default=0)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "points", pts)
        if self.colors is not None:
            cols = np.asarray(self.colors).reshape(-1, 3)
            if len(cols) != len(pts):
                raise ValueError(f"{len(cols)} colours for {len(pts)} points")
            object.__setattr__(self, "colors", cols.astype(np.uint8))
        if len(pts) and pts.min() < 0:
            raise ValueError("negative voxel coordinate")
        needed = precision_for(pts)
        if self.precision == 0:
            object.__setattr__(self, "precision", needed)
        elif self.precision < needed:
            raise ValueError(f"precision {self.precision} cannot hold max coordinate {pts.max()}")

    @classmethod
    def from_points(cls, points, colors=None, precision: int = 0) -> "PointCloud":
        """Voxelize: round half away from zero, merge duplicates (mean colour)."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("non-finite coordinates")
        ipts = round_half_away_int(pts)
        if len(ipts) and ipts.min() < 0:
            raise ValueError("negative coordinates after rounding")
        cols = None if colors is None else np.asarray(colors).reshape(-1, 3)
        if cols is not None and len(cols) != len(ipts):
            raise ValueError(f"{len(cols)} colours for {len(ipts)} points")
        ipts, cols = _merge_duplicates(ipts, cols)
        return cls(ipts, cols, precision)

    @classmethod
    def empty(cls, with_color: bool = False) -> "PointCloud":
        cols = np.zeros((0, 3), np.uint8) if with_color else None
        return cls(np.zeros((0, 3), np.int64), cols)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def has_colors(self) -> bool:
        return self.colors is not None

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        a, b = self.canonical(), other.canonical()
        if not np.array_equal(a.points, b.points):
            return False
        if (a.colors is None) != (b.colors is None):
            return False
        return a.colors is None or np.array_equal(a.colors, b.colors)

    __hash__ = None

    def canonical(self) -> "PointCloud":
        if len(self.points) < 2:
            return self
        order = np.lexsort(self.points.T[::-1])
        if np.all(order[1:] > order[:-1]):
            return self
        cols = None if self.colors is None else self.colors[order]
        return PointCloud(self.points[order], cols, self.precision)

    def __repr__(self) -> str:
        kind = "rgb" if self.has_colors else "geometry"
        return f"PointCloud(n={len(self)}, {kind}, precision={self.precision})"


@dataclass(eq=False)
class VoxelBlock:
    """Dense B x B x B x channels grid anchored at ``origin`` (absolute voxels).

    Channel 0 is occupancy (binary for source blocks, probability for decoded
    ones); channels 1..3, when present, hold RGB scaled to [0, 1] and are 0 on
    empty voxels.
    """

    origin: np.ndarray
    size: int
    data: np.ndarray
    n_input: int = 0

    @property
    def channels(self) -> int:
        return self.data.shape[-1]

    @property
    def grid_index(self) -> tuple[int, int, int]:
        return tuple(int(v) // self.size for v in self.origin)

    def occupied(self) -> np.ndarray:
        """Local coordinates of voxels with occupancy >= 0.5, z-major order."""
        # flat nonzero is several times faster than argwhere on large sparse grids
        flat = np.flatnonzero(self.data.reshape(-1, self.channels)[:, 0] >= 0.5)
        idx = np.stack(np.unravel_index(flat, self.data.shape[:3]), -1).astype(np.int64)
        return idx[np.lexsort((idx[:, 0], idx[:, 1], idx[:, 2]))]

    def colors_at(self, local: np.ndarray) -> np.ndarray:
        if self.channels < 4:
            raise ValueError("block has no colour channels")
        rgb = self.data[local[:, 0], local[:, 1], local[:, 2], 1:4].astype(np.float64)
        return np.clip(round_half_away(rgb * 255.0), 0, 255).astype(np.uint8)


def render_block(local_points: np.ndarray, size: int, colors: np.ndarray | None = None,
                 origin=(0, 0, 0)) -> VoxelBlock:
    """Paint local integer coordinates into a dense source block."""
    local_points = np.asarray(local_points, dtype=np.int64).reshape(-1, 3)
    channels = 1 if colors is None else 4
    data = np.zeros((size, size, size, channels), dtype=np.float32)
    x, y, z = local_points.T
    data[x, y, z, 0] = 1.0
    if colors is not None:
        data[x, y, z, 1:4] = np.asarray(colors, dtype=np.float32) / 255.0
    return VoxelBlock(np.asarray(origin, dtype=np.int64), size, data, len(local_points))


def partition(pc: PointCloud, block_size: int, stride: int = 1) -> list[tuple[VoxelBlock, np.ndarray]]:
    """Split a cloud into disjoint non-empty blocks ordered by origin."""
    if block_size < 8:
        raise ValueError(f"block size must be >= 8, got {block_size}")
    if block_size % stride:
        raise ValueError(f"block size {block_size} not divisible by model stride {stride}")
    if len(pc) == 0:
        return []
    cells = pc.points // block_size
    uniq, inverse = np.unique(cells, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(len(uniq) + 1))
    out = []
    for b, cell in enumerate(uniq):
        members = order[bounds[b]:bounds[b + 1]]
        origin = cell * block_size
        local = pc.points[members] - origin
        cols = None if pc.colors is None else pc.colors[members]
        block = render_block(local, block_size, cols, origin)
        out.append((block, origin))
    return out


def merge(blocks_with_origins, with_color: bool | None = None, precision: int = 0) -> PointCloud:
    """Inverse of :func:`partition` for binary blocks."""
    seen = set()
    all_pts, all_cols = [], []
    has_color = with_color
    for block, origin in blocks_with_origins:
        origin = np.asarray(origin, dtype=np.int64)
        if np.any(origin % block.size):
            raise ValueError(f"origin {origin.tolist()} is not on the block grid")
        key = (tuple(origin.tolist()), block.size)
        if key in seen:
            raise ValueError(f"overlapping block origin {origin.tolist()}")
        seen.add(key)
        if has_color is None:
            has_color = block.channels >= 4
        local = block.occupied()
        all_pts.append(local + origin)
        if has_color:
            all_cols.append(block.colors_at(local))
    if not all_pts:
        return PointCloud.empty(bool(has_color))
    pts = np.concatenate(all_pts)
    cols = np.concatenate(all_cols) if has_color else None
    return PointCloud.from_points(pts, cols, precision=max(precision, precision_for(pts)))


def octant_index(local: np.ndarray, size: int) -> np.ndarray:
    """Octant number (x_hi << 2 | y_hi << 1 | z_hi) of local coordinates."""
    half = size / 2.0
    hi = (np.asarray(local) >= half).astype(np.int64)
    return (hi[..., 0] << 2) | (hi[..., 1] << 1) | hi[..., 2]


def octant_occupancy(block: VoxelBlock) -> int:
    """8-bit mask: bit i set iff octant i holds at least one filled voxel."""
    local = np.argwhere(block.data[..., 0] >= 0.5)
    mask = 0
    for o in np.unique(octant_index(local, block.size)):
        mask |= 1 << int(o)
    return mask


def octant_admissible(size: int, mask: int) -> np.ndarray:
    """Boolean B^3 grid, True inside octants whose mask bit is set."""
    axis = np.arange(size) >= size / 2.0
    hx, hy, hz = np.meshgrid(axis, axis, axis, indexing="ij")
    octs = (hx.astype(np.int64) << 2) | (hy.astype(np.int64) << 1) | hz.astype(np.int64)
    return ((mask >> octs) & 1).astype(bool)


def sparsity(pc: PointCloud, k: int = 20) -> float:
    """Mean over points of the mean distance to their k nearest neighbours."""
    from scipy.spatial import cKDTree

    if len(pc) <= k:
        raise ValueError(f"sparsity needs more than {k} points, got {len(pc)}")
    pts = pc.points.astype(np.float64)
    dist, _ = cKDTree(pts).query(pts, k=k + 1)
    return float(dist[:, 1:].mean())
