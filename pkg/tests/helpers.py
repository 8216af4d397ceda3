"""Shared builders for the test suite."""

import numpy as np

from h2factor.geometry import build_cluster_tree, generate_uniform_grid
from h2factor.h2core import build_h2, matvec, orthogonalize_recompress
from h2factor.kernels import KernelSpec, default_diag_value
from h2factor.structure import dual_tree_traversal

# Per-family construction and factorization parameters used throughout:
# leaf size, leaf interpolation order, dimension, admissibility constant,
# regularization, compression and factorization tolerances, kernel scale.
FAMILIES = {
    "cov2d": dict(family="exp_covariance", dim=2, m=64, p0=8, eta=0.9,
                  alpha_r=1e-2, eps=1e-7, eps_lu=1e-6, corr_length=0.1),
    "cov3d": dict(family="exp_covariance", dim=3, m=64, p0=4, eta=0.7,
                  alpha_r=1e-2, eps=1e-7, eps_lu=1e-6, corr_length=0.2),
    "laplace2d": dict(family="laplace2d", dim=2, m=64, p0=8, eta=0.9,
                      alpha_r=1e-5, eps=1e-7, eps_lu=1e-6, corr_length=0.1),
    "helmholtz3d": dict(family="helmholtz3d", dim=3, m=64, p0=4, eta=0.7,
                        alpha_r=1e-2, eps=1e-7, eps_lu=1e-6, corr_length=0.1),
}


def kernel_spec(name, counts):
    p = FAMILIES[name]
    return KernelSpec(
        family=p["family"], dim=p["dim"], corr_length=p["corr_length"],
        diag_value=default_diag_value(p["family"], 1.0 / max(counts)),
        alpha_r=p["alpha_r"])


def build_problem(name, n, eps=None):
    """Tree, partition, kernel spec, and compressed operator."""
    p = FAMILIES[name]
    points, counts = generate_uniform_grid(n, p["dim"])
    tree = build_cluster_tree(points, p["m"])
    partition = dual_tree_traversal(tree, p["eta"])
    spec = kernel_spec(name, counts)
    h2 = build_h2(tree, partition, spec, p["p0"])
    h2 = orthogonalize_recompress(h2, p["eps"] if eps is None else eps)
    return tree, partition, spec, h2


def densify(h2):
    """Dense matrix of the compressed operator via matvec on unit vectors."""
    n = h2.n
    out = np.empty((n, n))
    eye = np.eye(n)
    for j in range(n):
        out[:, j] = matvec(h2, eye[:, j])
    return out


def random_block_system(rng, sizes, r):
    """Symmetric block system for elimination equivalence tests.

    First cluster has `r` redundant leading coordinates.  Diagonal is
    shifted to keep the leading block comfortably nonsingular.
    """
    total = sum(sizes)
    a = rng.standard_normal((total, total))
    a = 0.5 * (a + a.T) + total * np.eye(total)
    offs = np.concatenate([[0], np.cumsum(sizes)])
    return a, offs
