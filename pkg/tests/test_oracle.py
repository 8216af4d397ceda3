"""Dense reference path: assembly, solve, SVD, norm."""

import numpy as np
import pytest

from h2factor.geometry import build_cluster_tree, generate_uniform_grid
from h2factor.oracle import (
    assemble_dense,
    dense_lu_solve,
    dense_norm2,
    dense_svd,
)

from helpers import FAMILIES, build_problem, densify, kernel_spec


def test_identity_solve():
    b = np.arange(5.0)
    assert np.allclose(dense_lu_solve(np.eye(5), b), b)


def test_diagonal_solve():
    a = np.diag([1.0, 2.0, 3.0])
    assert np.allclose(dense_lu_solve(a, np.array([1.0, 2.0, 3.0])),
                       np.ones(3))


def test_random_spd_residual():
    rng = np.random.Generator(np.random.Philox(1))
    g = rng.standard_normal((50, 50))
    a = g @ g.T + 50 * np.eye(50)
    b = rng.standard_normal(50)
    x = dense_lu_solve(a, b)
    assert np.linalg.norm(a @ x - b) / np.linalg.norm(b) <= 1e-12


def test_solve_matches_reference_routine():
    # independent route: numpy's solver on the same system
    rng = np.random.Generator(np.random.Philox(2))
    a = rng.standard_normal((40, 40)) + 40 * np.eye(40)
    b = rng.standard_normal(40)
    assert np.allclose(dense_lu_solve(a, b), np.linalg.solve(a, b),
                       rtol=1e-10, atol=1e-12)


def test_singular_matrix_rejected():
    a = np.ones((4, 4))
    with pytest.raises(Exception):
        dense_lu_solve(a, np.ones(4))


def test_svd_reconstruction():
    rng = np.random.Generator(np.random.Philox(3))
    a = rng.standard_normal((80, 60))
    u, s, v = dense_svd(a)
    assert np.linalg.norm(u @ np.diag(s) @ v - a) <= 1e-12 * np.linalg.norm(a)


def test_norm2_is_top_singular_value():
    rng = np.random.Generator(np.random.Philox(4))
    a = rng.standard_normal((30, 30))
    _, s, _ = dense_svd(a)
    assert dense_norm2(a) == pytest.approx(s[0])


def test_assembly_cap_enforced():
    points, _ = generate_uniform_grid(512, 2)
    tree = build_cluster_tree(points, 64)
    spec = kernel_spec("cov2d", (32, 16))
    with pytest.raises(ValueError):
        assemble_dense(tree, spec, cap=256)


def test_assembly_follows_tree_order():
    points, counts = generate_uniform_grid(256, 2)
    tree = build_cluster_tree(points, 64)
    spec = kernel_spec("cov2d", counts)
    a = assemble_dense(tree, spec)
    i, j = 3, 200
    r = np.linalg.norm(tree.points[i] - tree.points[j])
    assert a[i, j] == pytest.approx(np.exp(-r / 0.1))


# measured construction error at n=512 in Frobenius norm relative to the
# dense assembly: 13 eps for cov2d, 3 eps for laplace2d, exactly zero for
# the 3D families whose partitions hold no admissible block at this size
@pytest.mark.parametrize("name,bound", [
    ("cov2d", 20e-7), ("cov3d", 1e-13),
    ("laplace2d", 10e-7), ("helmholtz3d", 1e-13),
])
def test_compression_matches_dense_assembly(name, bound):
    tree, _, spec, h2 = build_problem(name, 512)
    dense = assemble_dense(tree, spec)
    approx = densify(h2)
    rel = np.linalg.norm(approx - dense) / np.linalg.norm(dense)
    assert rel <= bound
