"""Point sets, uniform grids, and binary KD cluster trees.

The cluster tree recursively halves the point set along the widest axis of
each node's box.  Nodes keep the subdivision boxes (root = tight bounding box
of all points, children = parent box cut at the median split plane); these
boxes drive admissibility downstream.  The tree owns the permutation from
tree order back to the caller's point order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "generate_uniform_grid",
    "build_cluster_tree",
    "ClusterTree",
    "box_diameter",
    "box_distance",
    "box_center_distance",
]


def _axis_counts(n, d):
    # Factor n into d per-axis cell counts, as balanced as possible,
    # largest counts first.  Searches all divisor splits; n up to ~2^20
    # keeps this cheap.
    best = None

    def rec(rem, k, smallest_ratio_first):
        nonlocal best
        if k == 1:
            yield (rem,)
            return
        for a in range(1, rem + 1):
            if rem % a == 0:
                for rest in rec(rem // a, k - 1, None):
                    yield (a,) + rest

    for combo in rec(n, d, None):
        ratio = max(combo) / min(combo)
        key = (ratio, combo)
        if best is None or key < best:
            best = key
    counts = tuple(sorted(best[1], reverse=True))
    return counts


def generate_uniform_grid(n, d):
    """Cell centers of a uniform grid with n points on the unit cube.

    Returns (points, counts) with points ordered lexicographically by axis
    (first axis slowest) and counts the per-axis cell counts, largest first.
    """
    if n <= 0 or d not in (2, 3):
        raise ValueError(f"need n >= 1 and d in (2, 3), got n={n} d={d}")
    counts = _axis_counts(n, d)
    axes = [(np.arange(c) + 0.5) / c for c in counts]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([g.reshape(-1) for g in mesh], axis=1)
    return points, counts


def box_diameter(lo, hi):
    """Euclidean diagonal of an axis-aligned box."""
    return float(np.linalg.norm(np.asarray(hi) - np.asarray(lo)))


def box_distance(lo_a, hi_a, lo_b, hi_b):
    """Distance between two boxes as point sets (0 if they overlap)."""
    gap = np.maximum(np.asarray(lo_b) - np.asarray(hi_a), 0.0)
    gap = np.maximum(gap, np.asarray(lo_a) - np.asarray(hi_b))
    return float(np.linalg.norm(gap))


def box_center_distance(lo_a, hi_a, lo_b, hi_b):
    """Distance between box centers."""
    ca = (np.asarray(lo_a) + np.asarray(hi_a)) / 2.0
    cb = (np.asarray(lo_b) + np.asarray(hi_b)) / 2.0
    return float(np.linalg.norm(ca - cb))


@dataclass
class ClusterTree:
    """Binary cluster tree over a point set.

    points holds the coordinates in tree order; perm maps tree positions to
    the caller's original indices (points = original[perm]).  Node ids are
    preorder.  Leaves all sit at depth `depth` except in degenerate
    single-point corners.
    """

    points: np.ndarray
    perm: np.ndarray
    m_leaf: int
    parent: np.ndarray
    child_left: np.ndarray
    child_right: np.ndarray
    level: np.ndarray
    begin: np.ndarray
    end: np.ndarray
    box_lo: np.ndarray
    box_hi: np.ndarray
    depth: int
    levels: list = field(default_factory=list)

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def num_nodes(self):
        return self.parent.shape[0]

    def is_leaf(self, i):
        return self.child_left[i] < 0

    def size(self, i):
        return int(self.end[i] - self.begin[i])

    def children(self, i):
        return int(self.child_left[i]), int(self.child_right[i])

    def cluster_points(self, i):
        return self.points[self.begin[i]:self.end[i]]

    def diameter(self, i):
        return box_diameter(self.box_lo[i], self.box_hi[i])

    def to_tree_order(self, x):
        return np.asarray(x)[..., self.perm]

    def to_original_order(self, x):
        out = np.empty_like(np.asarray(x))
        out[..., self.perm] = np.asarray(x)
        return out


def _target_depth(n, m):
    # smallest k with ceil(n/2^k) <= m, clamped so no branch runs out of points
    depth = 0
    while (n + (1 << depth) - 1) // (1 << depth) > m and (1 << depth) < n:
        depth += 1
    return depth


def build_cluster_tree(points, m):
    """Build the KD cluster tree with leaf size <= m.

    Splits the widest axis of the node box at the midpoint between the two
    median-adjacent coordinates; equal coordinates break ties by lower
    original index.  All branches split down to a common depth so that every
    level is fully populated (sizes at the leaf level differ by at most 1).
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError("points must be a nonempty (n, d) array")
    if m < 1:
        raise ValueError("leaf size m must be >= 1")
    n = points.shape[0]
    depth = _target_depth(n, m)

    perm = np.arange(n)
    parent, child_left, child_right = [], [], []
    level, begin, end = [], [], []
    box_lo, box_hi = [], []

    root_lo = points.min(axis=0)
    root_hi = points.max(axis=0)

    def new_node(par, lev, b, e, lo, hi):
        parent.append(par)
        child_left.append(-1)
        child_right.append(-1)
        level.append(lev)
        begin.append(b)
        end.append(e)
        box_lo.append(lo)
        box_hi.append(hi)
        return len(parent) - 1

    def split(node):
        lev, b, e = level[node], begin[node], end[node]
        if lev >= depth or e - b < 2:
            return
        lo, hi = box_lo[node], box_hi[node]
        axis = int(np.argmax(hi - lo))
        idx = perm[b:e]
        coords = points[idx, axis]
        order = np.lexsort((idx, coords))
        perm[b:e] = idx[order]
        half = (e - b + 1) // 2
        cut = 0.5 * (points[perm[b + half - 1], axis] + points[perm[b + half], axis])
        lo_r = lo.copy()
        hi_l = hi.copy()
        hi_l[axis] = cut
        lo_r[axis] = cut
        left = new_node(node, lev + 1, b, b + half, lo.copy(), hi_l)
        right = new_node(node, lev + 1, b + half, e, lo_r, hi.copy())
        child_left[node] = left
        child_right[node] = right
        split(left)
        split(right)

    root = new_node(-1, 0, 0, n, root_lo.copy(), root_hi.copy())
    split(root)

    tree = ClusterTree(
        points=points[perm].copy(),
        perm=perm,
        m_leaf=m,
        parent=np.asarray(parent),
        child_left=np.asarray(child_left),
        child_right=np.asarray(child_right),
        level=np.asarray(level),
        begin=np.asarray(begin),
        end=np.asarray(end),
        box_lo=np.asarray(box_lo),
        box_hi=np.asarray(box_hi),
        depth=depth,
    )
    tree.levels = [np.flatnonzero(tree.level == l) for l in range(depth + 1)]
    return tree
