"""Block partition, sparsity constants, and coloring."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from h2factor.geometry import build_cluster_tree, generate_uniform_grid
from h2factor.structure import (
    admissible,
    color_groups,
    dual_tree_traversal,
    greedy_coloring,
    level_graph,
    sparsity_constant,
)


def _partition(n, dim, m, eta):
    points, _ = generate_uniform_grid(n, dim)
    tree = build_cluster_tree(points, m)
    return tree, dual_tree_traversal(tree, eta)


def test_admissibility_requires_separation():
    tree, part = _partition(1024, 2, 64, 0.9)
    for l, pairs in enumerate(part.admissible_leaves):
        for s, t in pairs:
            assert s != t
            assert admissible(tree, s, t, 0.9)
    for l, pairs in enumerate(part.inadmissible_leaves):
        for s, t in pairs:
            assert not admissible(tree, s, t, 0.9)


def test_pairs_canonical_and_same_level():
    tree, part = _partition(1024, 2, 64, 0.9)
    for store in (part.admissible_leaves, part.inadmissible_inner,
                  part.inadmissible_leaves):
        for l, pairs in enumerate(store):
            for s, t in pairs:
                assert s <= t
                assert tree.level[s] == l and tree.level[t] == l


def test_sparsity_constants_2d():
    # frozen per-level profile for the 2D grid at m=64, eta=0.9
    _, part = _partition(2 ** 14, 2, 64, 0.9)
    csp = [sparsity_constant(part, l) for l in part.levels()]
    assert csp == [1, 2, 4, 7, 9, 11, 9, 11, 9]
    assert max(csp) == 11


def test_sparsity_constants_3d():
    # frozen per-level profile for the 3D grid at m=64, eta=0.7
    _, part = _partition(2 ** 15, 3, 64, 0.7)
    csp = [sparsity_constant(part, l) for l in part.levels()]
    assert csp == [1, 2, 4, 8, 16, 31, 51, 69, 78, 81]
    assert max(csp) == 81


def test_block_coverage_is_exact():
    # every index pair is covered exactly once across all levels
    n = 512
    tree, part = _partition(n, 2, 64, 0.9)
    cover = np.zeros((n, n), dtype=np.int64)

    def mark(s, t):
        rs = slice(tree.begin[s], tree.end[s])
        ct = slice(tree.begin[t], tree.end[t])
        cover[rs, ct] += 1
        if s != t:
            cover[ct, rs] += 1

    for l in part.levels():
        for s, t in part.admissible_leaves[l]:
            mark(s, t)
        for s, t in part.inadmissible_leaves[l]:
            mark(s, t)
    assert np.all(cover == 1)


def test_inner_blocks_are_refined():
    # inadmissible pairs of non-leaf clusters appear as children pairs
    tree, part = _partition(1024, 2, 64, 0.9)
    for l, pairs in enumerate(part.inadmissible_inner):
        for s, t in pairs:
            assert not tree.is_leaf(s) and not tree.is_leaf(t)


def test_top_level_marks_shallowest_admissible():
    _, part = _partition(1024, 2, 64, 0.9)
    top = part.top_level
    assert part.admissible_leaves[top]
    assert all(not part.admissible_leaves[l] for l in range(top))


def test_level_graph_symmetric():
    neigh = level_graph([0, 1, 2, 3], [(0, 1), (1, 2), (0, 2)])
    assert list(neigh[0]) == [1, 2]
    assert list(neigh[1]) == [0, 2]
    assert list(neigh[3]) == []
    for c, nbrs in neigh.items():
        for j in nbrs:
            assert c in neigh[j]


@settings(max_examples=40, deadline=None)
@given(edges=st.lists(
    st.tuples(st.integers(0, 24), st.integers(0, 24)), max_size=120))
def test_greedy_coloring_valid(edges):
    clusters = sorted({v for e in edges for v in e} | {0})
    adjacency = level_graph(clusters, edges)
    color = greedy_coloring(adjacency)
    for c, nbrs in adjacency.items():
        for j in nbrs:
            assert color[c] != color[j]
    groups = color_groups(color)
    flat = sorted(c for g in groups for c in g)
    assert flat == sorted(adjacency)


def test_coloring_count_bounded_by_degree():
    # greedy never needs more colors than max degree + 1
    rng = np.random.Generator(np.random.Philox(2))
    nodes = list(range(40))
    edges = [(int(a), int(b))
             for a, b in rng.integers(0, 40, size=(150, 2)) if a != b]
    adjacency = level_graph(nodes, edges)
    color = greedy_coloring(adjacency)
    max_deg = max(len(v) for v in adjacency.values())
    assert max(color.values()) <= max_deg
