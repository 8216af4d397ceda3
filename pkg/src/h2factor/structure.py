"""Block structure over a cluster tree: admissibility, the dual-tree block
partition, per-level sparsity constants, and greedy coloring of the
per-level elimination graphs.

Pairs are stored once in canonical orientation (s <= t); the (t, s) block is
the implied transpose.  Admissibility compares the average box diagonal
against the distance between box centers, which reproduces the reference
sparsity constants for kd subdivision boxes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import box_center_distance, box_diameter

__all__ = [
    "admissible",
    "dual_tree_traversal",
    "BlockPartition",
    "sparsity_constant",
    "level_graph",
    "greedy_coloring",
    "color_groups",
]


def admissible(tree, s, t, eta):
    """True iff the average diameter of s and t is within eta times the
    distance between their box centers."""
    if s == t:
        return False
    half_sum = 0.5 * (tree.diameter(s) + tree.diameter(t))
    dist = box_center_distance(
        tree.box_lo[s], tree.box_hi[s], tree.box_lo[t], tree.box_hi[t]
    )
    return dist > 0.0 and half_sum <= eta * dist


@dataclass
class BlockPartition:
    """Same-level block partition produced by the dual tree traversal.

    admissible_leaves[l], inadmissible_inner[l], inadmissible_leaves[l] hold
    canonical (s, t) pairs of level-l clusters.  Dense blocks at level l are
    inadmissible_inner[l] | inadmissible_leaves[l] during elimination.
    """

    eta: float
    admissible_leaves: list
    inadmissible_inner: list
    inadmissible_leaves: list
    top_level: int | None = None
    _adm_sets: list = field(default_factory=list, repr=False)
    _dense_sets: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self._adm_sets = [set(p) for p in self.admissible_leaves]
        self._dense_sets = [
            set(a) | set(b)
            for a, b in zip(self.inadmissible_inner, self.inadmissible_leaves)
        ]

    def levels(self):
        return range(len(self.admissible_leaves))

    def dense_pairs(self, level):
        return sorted(self._dense_sets[level])

    def coupling_index(self, level):
        """cluster -> [(canonical pair, transposed)] over the level's
        admissible leaves."""
        index = {}
        for s, t in self.admissible_leaves[level]:
            index.setdefault(s, []).append(((s, t), False))
            index.setdefault(t, []).append(((s, t), True))
        return index

    def is_dense(self, level, s, t):
        return (min(s, t), max(s, t)) in self._dense_sets[level]

    def is_admissible_leaf(self, level, s, t):
        return (min(s, t), max(s, t)) in self._adm_sets[level]


def dual_tree_traversal(tree, eta):
    """Partition the index square into same-level admissible and dense
    blocks, recursing from the (root, root) pair."""
    nlev = tree.depth + 1
    adm = [[] for _ in range(nlev)]
    inner = [[] for _ in range(nlev)]
    dense = [[] for _ in range(nlev)]

    stack = [(0, 0)]
    while stack:
        s, t = stack.pop()
        lev = int(tree.level[s])
        if admissible(tree, s, t, eta):
            adm[lev].append((s, t))
        elif tree.is_leaf(s) or tree.is_leaf(t):
            dense[lev].append((s, t))
        else:
            inner[lev].append((s, t))
            sl, sr = tree.children(s)
            if s == t:
                stack += [(sl, sl), (sl, sr), (sr, sr)]
            else:
                tl, tr = tree.children(t)
                stack += [(sl, tl), (sl, tr), (sr, tl), (sr, tr)]

    for rows in (adm, inner, dense):
        for pairs in rows:
            pairs.sort()
    part = BlockPartition(
        eta=eta,
        admissible_leaves=adm,
        inadmissible_inner=inner,
        inadmissible_leaves=dense,
    )
    levels_with_adm = [l for l in range(nlev) if adm[l]]
    part.top_level = min(levels_with_adm) if levels_with_adm else None
    return part


def sparsity_constant(partition, level):
    """Max number of inadmissible blocks in any block row of this level."""
    counts = {}
    for s, t in partition._dense_sets[level]:
        counts[s] = counts.get(s, 0) + 1
        if t != s:
            counts[t] = counts.get(t, 0) + 1
    return max(counts.values()) if counts else 0


def level_graph(clusters, pairs):
    """Adjacency over `clusters` induced by canonical `pairs` (self edges
    dropped).  Returns {cluster: sorted neighbor array}."""
    neigh = {int(c): set() for c in clusters}
    for s, t in pairs:
        if s != t:
            neigh[s].add(t)
            neigh[t].add(s)
    return {c: np.array(sorted(v), dtype=np.int64) for c, v in neigh.items()}


def greedy_coloring(adjacency):
    """Greedy color assignment in ascending cluster-id order; each cluster
    takes the smallest color unused by its already-colored neighbors."""
    color = {}
    for c in sorted(adjacency):
        used = {color[j] for j in adjacency[c] if j in color}
        k = 0
        while k in used:
            k += 1
        color[c] = k
    return color


def color_groups(color):
    """Colors as lists of cluster ids, ascending within each color."""
    ncol = max(color.values()) + 1 if color else 0
    groups = [[] for _ in range(ncol)]
    for c in sorted(color):
        groups[color[c]].append(c)
    return groups
