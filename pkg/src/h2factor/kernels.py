"""Kernel families and matrix entry evaluation.

A KernelSpec fixes the kernel family, its parameters, the value placed on
the diagonal for kernels singular at r = 0, the diagonal regularization
alpha_r, and an optional symmetric low-rank update W W^T.  Smooth kernel
evaluation between arbitrary point sets (used for interpolation-grid
couplings) is separate from true matrix-entry evaluation (which applies the
diagonal rules and the low-rank term).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.distance import cdist

__all__ = [
    "KernelSpec",
    "eval_kernel",
    "entry_block",
    "make_low_rank_factor",
    "default_diag_value",
]

TWO_PI = 2.0 * np.pi


@dataclass
class KernelSpec:
    family: str
    dim: int
    corr_length: float = 0.1
    kappa: float = 3.0
    diag_value: float = 0.0
    alpha_r: float = 0.0
    lru_factor: np.ndarray | None = None

    def base(self):
        """Copy without the low-rank update (construction-time kernel)."""
        return replace(self, lru_factor=None)


def _apply_kernel(spec, r):
    if spec.family == "exp_covariance":
        return np.exp(-r / spec.corr_length)
    if spec.family == "laplace2d":
        with np.errstate(divide="ignore"):
            return -np.log(r) / TWO_PI
    if spec.family == "helmholtz3d":
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.cos(spec.kappa * r) / r
    raise ValueError(f"unknown kernel family {spec.family!r}")


def eval_kernel(spec, x, y):
    """Kernel values between point sets x (a, d) and y (b, d).

    No diagonal handling: callers must guarantee r > 0 for singular
    families.
    """
    r = cdist(np.atleast_2d(x), np.atleast_2d(y))
    return _apply_kernel(spec, r)


def entry_block(spec, points, rows, cols):
    """True matrix entries A[np.ix_(rows, cols)]: kernel values with the
    r = 0 diagonal rule, + alpha_r on coincident indices, + the low-rank
    term."""
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    x = points[rows]
    y = points[cols]
    r = cdist(x, y)
    vals = _apply_kernel(spec, r)
    same = rows[:, None] == cols[None, :]
    if same.any():
        if spec.family == "exp_covariance":
            diag = 1.0
        else:
            diag = spec.diag_value
        vals[same] = diag + spec.alpha_r
    if spec.lru_factor is not None:
        w = spec.lru_factor
        vals += w[rows] @ w[cols].T
    return vals


def make_low_rank_factor(n, rank, seed):
    """Seeded n x rank factor of standard normals scaled by 1/sqrt(n).

    Uses the counter-based Philox generator so draws are reproducible
    across platforms.
    """
    gen = np.random.Generator(np.random.Philox(seed))
    return gen.standard_normal((n, rank)) / np.sqrt(n)


def default_diag_value(family, h):
    """Diagonal value for kernels singular at r = 0, given the smallest
    grid spacing h."""
    if family == "laplace2d":
        return max(0.0, -np.log(h) / TWO_PI)
    if family == "helmholtz3d":
        return 1.0 / h
    return 1.0
