"""Exact nearest-neighbor index over 3D points.

Balanced KD-tree: median splits on the widest dimension, flat array
storage, numba query kernel. Queries return the exact global nearest
point with ties broken by smallest point index, so results are stable
under permutation of equal points and match a linear scan exactly.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .validation import as_float_array, check_finite

_BUCKET = 16


@njit(cache=True)
def _query_kernel(points, order, starts, ends, dims, vals, lefts, rights,
                  queries, out_idx, out_d2):
    stack_node = np.empty(256, dtype=np.int64)
    stack_bound = np.empty(256)
    for qi in range(queries.shape[0]):
        qx = queries[qi, 0]
        qy = queries[qi, 1]
        qz = queries[qi, 2]
        best_d2 = np.inf
        best_idx = -1
        top = 1
        stack_node[0] = 0
        stack_bound[0] = 0.0
        while top > 0:
            top -= 1
            if stack_bound[top] > best_d2:
                continue
            node = stack_node[top]
            dim = dims[node]
            if dim < 0:
                for j in range(starts[node], ends[node]):
                    p = order[j]
                    dx = points[p, 0] - qx
                    dy = points[p, 1] - qy
                    dz = points[p, 2] - qz
                    d2 = dx * dx + dy * dy + dz * dz
                    if d2 < best_d2 or (d2 == best_d2 and p < best_idx):
                        best_d2 = d2
                        best_idx = p
                continue
            if dim == 0:
                diff = qx - vals[node]
            elif dim == 1:
                diff = qy - vals[node]
            else:
                diff = qz - vals[node]
            if diff < 0.0:
                near, far = lefts[node], rights[node]
            else:
                near, far = rights[node], lefts[node]
            # Far side first so the near side is popped (and searched) first;
            # the recorded bound re-prunes stale entries at pop time.
            stack_node[top] = far
            stack_bound[top] = diff * diff
            top += 1
            stack_node[top] = near
            stack_bound[top] = 0.0
            top += 1
        out_idx[qi] = best_idx
        out_d2[qi] = best_d2


class KDTree:
    def __init__(self, points):
        pts = check_finite(as_float_array(points, "points", (-1, 3)), "points")
        if pts.shape[0] == 0:
            raise ValueError("points must be nonempty")
        self.points = np.ascontiguousarray(pts)
        self.order = np.arange(pts.shape[0], dtype=np.int64)
        starts, ends, dims, vals, lefts, rights = [], [], [], [], [], []

        def build(start, end):
            node = len(starts)
            starts.append(start)
            ends.append(end)
            dims.append(-1)
            vals.append(0.0)
            lefts.append(-1)
            rights.append(-1)
            if end - start <= _BUCKET:
                return node
            sub = self.order[start:end]
            coords = self.points[sub]
            spread = coords.max(axis=0) - coords.min(axis=0)
            dim = int(np.argmax(spread))
            if spread[dim] == 0.0:
                return node  # all coincident, keep as one leaf
            mid = (end - start) // 2
            part = np.argpartition(coords[:, dim], mid)
            self.order[start:end] = sub[part]
            dims[node] = dim
            vals[node] = self.points[self.order[start + mid], dim]
            lefts[node] = build(start, start + mid)
            rights[node] = build(start + mid, end)
            return node

        build(0, pts.shape[0])
        self._starts = np.asarray(starts, dtype=np.int64)
        self._ends = np.asarray(ends, dtype=np.int64)
        self._dims = np.asarray(dims, dtype=np.int64)
        self._vals = np.asarray(vals)
        self._lefts = np.asarray(lefts, dtype=np.int64)
        self._rights = np.asarray(rights, dtype=np.int64)

    def query(self, queries):
        """Nearest point index and squared distance for each query row."""
        q = np.ascontiguousarray(as_float_array(queries, "queries", (-1, 3)))
        idx = np.empty(q.shape[0], dtype=np.int64)
        d2 = np.empty(q.shape[0])
        _query_kernel(self.points, self.order, self._starts, self._ends,
                      self._dims, self._vals, self._lefts, self._rights,
                      q, idx, d2)
        return idx, d2

    def query_one(self, point):
        idx, d2 = self.query(np.asarray(point, dtype=np.float64)[None, :])
        return int(idx[0]), float(d2[0])
