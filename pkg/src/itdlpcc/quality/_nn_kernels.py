"""Exact nearest-neighbour search over a uniform voxel-grid hash.

Reference points are bucketed into cubic cells; a query walks Chebyshev rings
of cells outwards and stops once every unvisited cell is strictly farther
than the best distance found, so all equidistant neighbours (ties) are seen.
Queries that would need more than a fixed number of rings are reported as
unresolved and handed to a tree search by the caller.
"""

import math

import numpy as np

from .._accel import jitable, kernel


@jitable
def _cell_of(p, origin, cell):
    return np.int64(math.floor((p - origin) / cell))


@jitable
def _visit_ring(q, c, r, dims, ukeys, starts, ref, best, mode, out_idx, out_pos):
    """Scan cells at Chebyshev distance r from cell c.

    mode 0 updates best[0] (min squared distance) and best[1] (tie count);
    mode 1 appends indices at distance best[0] into out_idx.
    """
    x0 = max(c[0] - r, 0)
    x1 = min(c[0] + r, dims[0] - 1)
    y0 = max(c[1] - r, 0)
    y1 = min(c[1] + r, dims[1] - 1)
    z0 = max(c[2] - r, 0)
    z1 = min(c[2] + r, dims[2] - 1)
    for x in range(x0, x1 + 1):
        for y in range(y0, y1 + 1):
            edge = abs(x - c[0]) == r or abs(y - c[1]) == r
            z = z0
            while z <= z1:
                if not edge and abs(z - c[2]) != r:
                    # jump straight to the far face of the ring
                    z = c[2] + r
                    if z > z1:
                        break
                key = (x * dims[1] + y) * dims[2] + z
                k = np.searchsorted(ukeys, key)
                if k < ukeys.shape[0] and ukeys[k] == key:
                    for j in range(starts[k], starts[k + 1]):
                        dx = ref[j, 0] - q[0]
                        dy = ref[j, 1] - q[1]
                        dz = ref[j, 2] - q[2]
                        d = dx * dx + dy * dy + dz * dz
                        if mode == 0:
                            if d < best[0]:
                                best[0] = d
                                best[1] = 1.0
                            elif d == best[0]:
                                best[1] += 1.0
                        elif d == best[0]:
                            out_idx[out_pos[0]] = j
                            out_pos[0] += 1
                z += 1


@jitable
def _search(q, origin, cell, dims, ukeys, starts, ref, best, mode, out_idx, out_pos, limit):
    """Ring search up to ``limit`` rings; returns False if still unresolved."""
    c = np.empty(3, np.int64)
    max_r = 0
    for a in range(3):
        c[a] = _cell_of(q[a], origin[a], cell)
        far = max(abs(c[a]), abs(c[a] - (dims[a] - 1)))
        if far > max_r:
            max_r = far
    r = 0
    while r <= max_r:
        _visit_ring(q, c, r, dims, ukeys, starts, ref, best, mode, out_idx, out_pos)
        reach = r * cell
        if best[0] <= reach * reach:
            return True
        if r >= limit:
            return r >= max_r
        r += 1
    return True


@kernel
def nn_best(queries, origin, cell, dims, ukeys, starts, ref, limit, out_d2, out_count):
    """Best squared distance and tie count per query; count -1 marks queries
    left unresolved after ``limit`` rings."""
    best = np.empty(2, np.float64)
    dummy = np.empty(0, np.int64)
    pos = np.zeros(1, np.int64)
    for i in range(queries.shape[0]):
        best[0] = np.inf
        best[1] = 0.0
        done = _search(queries[i], origin, cell, dims, ukeys, starts, ref, best, 0, dummy, pos, limit)
        out_d2[i] = best[0]
        out_count[i] = np.int64(best[1]) if done else -1


@kernel
def nn_collect(queries, origin, cell, dims, ukeys, starts, ref, limit, best_d2, offsets, out_idx):
    best = np.empty(2, np.float64)
    pos = np.zeros(1, np.int64)
    for i in range(queries.shape[0]):
        best[0] = best_d2[i]
        pos[0] = offsets[i]
        _search(queries[i], origin, cell, dims, ukeys, starts, ref, best, 1, out_idx, pos, limit)
