"""Naive dense reference path.

Everything here is deliberately simple and shares no numerics with the
hierarchical factorization: dense assembly straight from the entry
definition, textbook Gaussian elimination with partial pivoting, and dense
spectral quantities.  Used to validate the fast path at small n.
"""

from __future__ import annotations

import numpy as np

from .kernels import entry_block

__all__ = [
    "assemble_dense",
    "dense_lu_solve",
    "dense_norm2",
    "dense_svd",
]

DEFAULT_CAP = 4096


def assemble_dense(tree, spec, cap=DEFAULT_CAP):
    """Full matrix in tree order, entry by entry from the kernel spec."""
    n = tree.n
    if n > cap:
        raise ValueError(f"oracle assembly capped at {cap}, got n={n}")
    idx = np.arange(n)
    return entry_block(spec, tree.points, idx, idx)


def dense_lu_solve(a, b):
    """Solve a x = b by Gaussian elimination with partial pivoting."""
    a = np.array(a, dtype=np.float64)
    x = np.array(b, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n) or x.shape[0] != n:
        raise ValueError("shape mismatch")
    for k in range(n - 1):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if a[p, k] == 0.0:
            raise np.linalg.LinAlgError(f"singular pivot at column {k}")
        if p != k:
            a[[k, p]] = a[[p, k]]
            x[[k, p]] = x[[p, k]]
        mult = a[k + 1:, k] / a[k, k]
        a[k + 1:, k + 1:] -= np.outer(mult, a[k, k + 1:])
        x[k + 1:] -= np.outer(mult, np.atleast_1d(x[k])).reshape(x[k + 1:].shape)
    for i in range(n - 1, -1, -1):
        x[i] = (x[i] - a[i, i + 1:] @ x[i + 1:]) / a[i, i]
    return x


def dense_norm2(a):
    """Spectral norm via full SVD."""
    return float(np.linalg.svd(np.asarray(a), compute_uv=False)[0])


def dense_svd(a):
    """Full SVD (U, s, Vt); thin wrapper kept for a single oracle entry
    point."""
    return np.linalg.svd(np.asarray(a), full_matrices=False)
