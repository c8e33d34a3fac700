"""Exact nearest neighbours with ties, for integer-valued point sets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import _accel
from . import _nn_kernels as K


@dataclass
class Neighbours:
    """Squared distance to the nearest reference point, plus every tied index.

    ``index[offsets[i]:offsets[i + 1]]`` lists all reference points at
    distance ``d2[i]`` from query ``i`` (ascending index order).
    """

    d2: np.ndarray
    offsets: np.ndarray | None = None
    index: np.ndarray | None = None

    def ties(self, i: int) -> np.ndarray:
        return self.index[self.offsets[i]:self.offsets[i + 1]]

    def mean_over_ties(self, values: np.ndarray) -> np.ndarray:
        """Average ``values[j]`` (1-D or rows) over each query's tied neighbours."""
        counts = np.diff(self.offsets)
        owner = np.repeat(np.arange(len(counts)), counts)
        vals = values[self.index]
        sums = np.zeros((len(counts),) + vals.shape[1:], dtype=np.float64)
        np.add.at(sums, owner, vals)
        return sums / counts.reshape((-1,) + (1,) * (vals.ndim - 1))


RING_BUDGET = 3


def _offsets(counts: np.ndarray) -> np.ndarray:
    offsets = np.zeros(len(counts) + 1, np.int64)
    np.cumsum(counts, out=offsets[1:])
    return offsets


class GridIndex:
    """Voxel-grid hash of reference points.

    Queries resolved within ``ring_budget`` cell rings are answered by the
    grid kernel; the rest (points far from every reference point) go to a
    k-d tree over the same points.
    """

    def __init__(self, ref: np.ndarray):
        ref = np.ascontiguousarray(ref, dtype=np.float64).reshape(-1, 3)
        if len(ref) == 0:
            raise ValueError("empty reference set")
        self.n = len(ref)
        lo = ref.min(axis=0)
        extent = float((ref.max(axis=0) - lo).max()) + 1.0
        # surface-like sets hold about extent**2 points
        self.cell = float(max(1.0, np.floor(2.0 * extent / np.sqrt(len(ref)))))
        self.origin = lo
        cells = np.floor((ref - lo) / self.cell).astype(np.int64)
        self.dims = cells.max(axis=0) + 1
        keys = (cells[:, 0] * self.dims[1] + cells[:, 1]) * self.dims[2] + cells[:, 2]
        order = np.argsort(keys, kind="stable")
        self.order = order
        self.ref = np.ascontiguousarray(ref[order])
        sorted_keys = keys[order]
        self.ukeys, first = np.unique(sorted_keys, return_index=True)
        self.starts = np.append(first, len(sorted_keys)).astype(np.int64)

    def query(self, queries: np.ndarray, with_ties: bool = False, use_jit: bool | None = None,
              ring_budget: int = RING_BUDGET) -> Neighbours:
        queries = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
        jit = use_jit if use_jit is not None else _accel.NUMBA_ENABLED
        best = K.nn_best.jit if jit else K.nn_best.py
        collect = K.nn_collect.jit if jit else K.nn_collect.py
        d2 = np.empty(len(queries), np.float64)
        counts = np.empty(len(queries), np.int64)
        args = (self.origin, self.cell, self.dims, self.ukeys, self.starts, self.ref, ring_budget)
        best(queries, *args, d2, counts)
        far = np.flatnonzero(counts < 0)
        kd = _kdtree_neighbours(self.ref, queries[far], with_ties) if len(far) else None
        if kd is not None:
            d2[far] = kd.d2
        if not with_ties:
            return Neighbours(d2)
        near = np.flatnonzero(counts >= 0)
        q_near = np.ascontiguousarray(queries[near])
        near_offsets = _offsets(counts[near])
        near_idx = np.empty(near_offsets[-1], np.int64)
        collect(q_near, *args, np.ascontiguousarray(d2[near]), near_offsets, near_idx)
        if kd is not None:
            counts[far] = np.diff(kd.offsets)
        offsets = _offsets(counts)
        idx = np.empty(offsets[-1], np.int64)
        for rows, sub_off, sub_idx in ((near, near_offsets, near_idx),) + (
                ((far, kd.offsets, kd.index),) if kd is not None else ()):
            if len(rows):
                dest = np.repeat(offsets[rows], np.diff(sub_off)) + (
                    np.arange(sub_off[-1]) - np.repeat(sub_off[:-1], np.diff(sub_off)))
                idx[dest] = sub_idx
        idx = self.order[idx]
        for i in np.flatnonzero(counts > 1):
            idx[offsets[i]:offsets[i + 1]].sort()
        return Neighbours(d2, offsets, idx)


def _kdtree_neighbours(ref: np.ndarray, queries: np.ndarray, with_ties: bool) -> Neighbours:
    """Exact search with scipy's k-d tree; ties found by a ball query at the best distance."""
    from scipy.spatial import cKDTree

    tree = cKDTree(ref)
    _, nearest = tree.query(queries, k=1)
    nearest = np.asarray(nearest, dtype=np.int64).reshape(-1)
    d2 = ((queries - ref[nearest]) ** 2).sum(axis=1)
    if not with_ties:
        return Neighbours(d2)
    balls = tree.query_ball_point(queries, np.sqrt(d2) * (1 + 1e-9) + 1e-9)
    offsets = np.zeros(len(queries) + 1, np.int64)
    chunks = []
    for i, cand in enumerate(balls):
        cand = np.asarray(sorted(cand), dtype=np.int64)
        keep = cand[((ref[cand] - queries[i]) ** 2).sum(axis=1) == d2[i]]
        chunks.append(keep)
        offsets[i + 1] = offsets[i] + len(keep)
    idx = np.concatenate(chunks) if chunks else np.zeros(0, np.int64)
    return Neighbours(d2, offsets, idx)


def nearest(ref, queries, with_ties: bool = False) -> Neighbours:
    """Nearest reference point(s) for each query.

    With numba the grid-hash kernel answers nearby queries; with numba
    disabled the search runs entirely on scipy's k-d tree plus an exact tie
    sweep. Both give identical results on integer coordinates.
    """
    ref = np.ascontiguousarray(ref, dtype=np.float64).reshape(-1, 3)
    queries = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    if len(ref) == 0:
        raise ValueError("empty reference set")
    if _accel.NUMBA_ENABLED:
        return GridIndex(ref).query(queries, with_ties, use_jit=True)
    return _kdtree_neighbours(ref, queries, with_ties)
