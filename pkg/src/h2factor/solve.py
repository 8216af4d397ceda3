"""Substitution against a skeletonization factorization.

The factorization writes the matrix as a chain of per-batch operators
around a block-diagonal middle: per cluster an orthogonal rotation, a
unit block eliminator acting from its redundant coordinates, and the LU
factors of the redundant diagonal block; plus one pivoted dense factor
for everything left at the shallowest compressed level.  The solve
applies the inverse chain in elimination order (forward), the dense
solve in the middle, then the reversed chain (backward).  Level vectors
stay alive between the two passes: redundant coordinates rest while the
coarser levels run and are revisited on the way back down.

Edge products are computed in compute-only tasks and applied in a fixed
sequential order, so solutions are bitwise identical for any thread
count.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lu_solve, solve_triangular

from .h2core import matvec
from .parallel import WorkerPool

__all__ = ["solve", "solve_multi", "refined_solve"]


def solve(fac, b, threads=1):
    """x with (factored matrix) x = b, both in tree order."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (fac.n,):
        raise ValueError(f"right-hand side must have shape ({fac.n},)")
    return _substitute(fac, b, threads)


def solve_multi(fac, b, threads=1):
    """Block variant of solve for an n x q right-hand side."""
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 2 or b.shape[0] != fac.n:
        raise ValueError(f"right-hand side must have shape ({fac.n}, q)")
    return _substitute(fac, b, threads)


def _substitute(fac, b, threads):
    if not fac.records:
        return lu_solve((fac.top_lu, fac.top_piv), b, check_finite=False)
    vecs = []
    y = b.copy()
    with WorkerPool(threads) as pool:
        for rec in fac.records:
            _forward_level(rec, y, pool)
            vecs.append(y)
            y = np.ascontiguousarray(y[rec.up_index])
        x = lu_solve((fac.top_lu, fac.top_piv), y, check_finite=False)
        for rec, yv in zip(reversed(fac.records), reversed(vecs)):
            yv[rec.up_index] = x
            _backward_level(rec, yv, pool)
            x = yv
    return x


def refined_solve(h2, fac, b, threads=1, steps=1):
    """Substitution followed by iterative refinement against h2.

    The factorization truncates basis augmentations and drops weak fill,
    so applying it once leaves a residual proportional to the discarded
    mass.  Each refinement step recovers the residual through one matvec
    and one extra substitution, both linear in n, which pulls the
    backward error down toward the truncation floor even when the
    operator has small singular values that amplify the dropped blocks.
    """
    x = solve(fac, b, threads)
    for _ in range(steps):
        r = b - matvec(h2, x)
        x = x + solve(fac, r, threads)
    return x


def _target_span(rec, c, other, kind):
    if kind == "self":
        off = rec.offset[c]
        return off + rec.factors[c].r, off + rec.size[c]
    off = rec.offset[other]
    if kind == "full":
        return off, off + rec.size[other]
    return off + rec.factors[other].r, off + rec.size[other]


def _forward_level(rec, y, pool):
    for batch in rec.batches:

        def rotate(c):
            fct = rec.factors[c]
            off = rec.offset[c]
            return c, fct.q.T @ y[off:off + rec.size[c]]

        for c, seg in pool.map(rotate, batch):
            y[rec.offset[c]:rec.offset[c] + rec.size[c]] = seg

        def products(c):
            fct = rec.factors[c]
            y_r = y[rec.offset[c]:rec.offset[c] + fct.r]
            return c, [(other, kind, mat.T @ y_r)
                       for other, kind, mat in fct.edges]

        active = [c for c in batch if rec.factors[c].r > 0]
        for c, out in pool.map(products, active):
            for other, kind, vec in out:
                lo, hi = _target_span(rec, c, other, kind)
                y[lo:hi] += vec

        def diagonal(c):
            fct = rec.factors[c]
            if fct.r == 0:
                return c, None
            off = rec.offset[c]
            y_r = y[off:off + fct.r].copy()
            for i, p in enumerate(fct.piv):
                if p != i:
                    y_r[[i, p]] = y_r[[p, i]]
            y_r = solve_triangular(fct.lu, y_r, lower=True,
                                   unit_diagonal=True, check_finite=False)
            return c, y_r

        for c, y_r in pool.map(diagonal, batch):
            if y_r is not None:
                y[rec.offset[c]:rec.offset[c] + y_r.shape[0]] = y_r


def _backward_level(rec, y, pool):
    for batch in reversed(rec.batches):

        def diagonal(c):
            fct = rec.factors[c]
            if fct.r == 0:
                return c, None
            off = rec.offset[c]
            return c, solve_triangular(fct.lu, y[off:off + fct.r],
                                       lower=False, check_finite=False)

        for c, y_r in pool.map(diagonal, batch):
            if y_r is not None:
                y[rec.offset[c]:rec.offset[c] + len(y_r)] = y_r

        def gather(c):
            fct = rec.factors[c]
            acc = np.zeros((fct.r,) + y.shape[1:])
            for other, kind, mat in fct.edges:
                lo, hi = _target_span(rec, c, other, kind)
                acc += mat @ y[lo:hi]
            return c, acc

        active = [c for c in batch if rec.factors[c].r > 0]
        for c, acc in pool.map(gather, active):
            y[rec.offset[c]:rec.offset[c] + acc.shape[0]] += acc

        def rotate(c):
            fct = rec.factors[c]
            off = rec.offset[c]
            return c, fct.q @ y[off:off + rec.size[c]]

        for c, seg in pool.map(rotate, batch):
            y[rec.offset[c]:rec.offset[c] + rec.size[c]] = seg
