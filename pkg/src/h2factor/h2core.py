"""Hierarchical matrix representation with nested bases.

A kernel matrix on a cluster tree is stored as dense blocks for the
inadmissible leaf pairs of the block partition plus low-rank coupling
blocks V_s S_st V_t^T for the admissible ones.  Column bases are nested:
a non-leaf cluster's basis is the block-diagonal stack of its children's
bases times per-child transfer matrices, so only leaf bases and transfers
are stored.

Construction interpolates the kernel on tensor Chebyshev grids, after
which an algebraic recompression pass orthonormalizes the bases and
truncates them to the requested tolerance.  The matrix is symmetric and
only the lower cluster id side of each block pair is stored; transposes
are formed on access.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import entry_block, eval_kernel
from .structure import BlockPartition

__all__ = [
    "H2Matrix",
    "absorb_low_rank",
    "build_h2",
    "chebyshev_grid",
    "estimate_norm2",
    "h2_nbytes",
    "interpolation_matrix",
    "matvec",
    "orthogonalize_recompress",
]


def _cheb_nodes(p):
    # first-kind points on [-1, 1], descending
    i = np.arange(p)
    return np.cos((2 * i + 1) * np.pi / (2 * p))


def _cheb_weights(p):
    # barycentric weights for first-kind points, up to a common factor
    i = np.arange(p)
    return (-1.0) ** i * np.sin((2 * i + 1) * np.pi / (2 * p))


def _map_nodes(p, lo, hi):
    return 0.5 * (_cheb_nodes(p) + 1.0) * (hi - lo) + lo


def chebyshev_grid(box_lo, box_hi, p):
    """Tensor product of p first-kind Chebyshev points per axis.

    Returns (p**d, d) points, the first axis varying slowest.
    """
    axes = [_map_nodes(p, lo, hi) for lo, hi in zip(box_lo, box_hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _lagrange_1d(x, nodes, weights):
    """Rows evaluate the Lagrange basis on `nodes` at the points `x`."""
    diff = x[:, None] - nodes[None, :]
    exact_row, exact_col = np.nonzero(diff == 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = weights[None, :] / diff
        out = ratio / np.sum(ratio, axis=1, keepdims=True)
    if exact_row.size:
        out[exact_row] = 0.0
        out[exact_row, exact_col] = 1.0
    return out


def interpolation_matrix(points, box_lo, box_hi, p):
    """Evaluation of the tensor Lagrange basis of the box grid at `points`.

    The result maps values on the chebyshev_grid of the box to interpolated
    values at the points, with columns in the grid's lexicographic order.
    """
    points = np.asarray(points)
    w = _cheb_weights(p)
    per_axis = [
        _lagrange_1d(points[:, ax], _map_nodes(p, lo, hi), w)
        for ax, (lo, hi) in enumerate(zip(box_lo, box_hi))
    ]
    if len(per_axis) == 2:
        out = np.einsum("ia,ib->iab", per_axis[0], per_axis[1])
    else:
        out = np.einsum("ia,ib,ic->iabc", per_axis[0], per_axis[1], per_axis[2])
    return out.reshape(points.shape[0], p ** len(per_axis))


@dataclass
class H2Matrix:
    """Symmetric kernel matrix in nested-basis hierarchical form.

    dense and coupling hold one block per canonical pair (s <= t); the
    mirrored block is the transpose.  transfer[c] maps cluster c's basis
    coefficients into its parent's.
    """

    tree: object
    partition: BlockPartition
    leaf_basis: dict = field(default_factory=dict)
    transfer: dict = field(default_factory=dict)
    coupling: dict = field(default_factory=dict)
    dense: dict = field(default_factory=dict)
    rank: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.tree.n

    def basis_levels(self):
        t = self.partition.top_level
        if t is None:
            return range(0)
        return range(t, self.tree.depth + 1)

    def index_range(self, c):
        return np.arange(self.tree.begin[c], self.tree.end[c])


def _order_schedule(p0, depth, level):
    return p0 + (depth - level) // 2


def build_h2(tree, partition, spec, p0):
    """Interpolation-based construction of the hierarchical form.

    Bases are polynomial (not yet orthonormal); follow with
    orthogonalize_recompress before factorizing.  Low-rank update terms
    are handled by absorb_low_rank, not here.
    """
    if spec.lru_factor is not None:
        raise ValueError("build the base kernel first, then absorb_low_rank")
    h2 = H2Matrix(tree=tree, partition=partition)
    pts = tree.points

    for level in partition.levels():
        for s, t in partition.inadmissible_leaves[level]:
            rows = np.arange(tree.begin[s], tree.end[s])
            cols = np.arange(tree.begin[t], tree.end[t])
            h2.dense[(s, t)] = entry_block(spec, pts, rows, cols)

    top = partition.top_level
    if top is None:
        return h2

    grids = {}
    for level in range(tree.depth, top - 1, -1):
        p = _order_schedule(p0, tree.depth, level)
        for c in tree.levels[level]:
            grids[c] = chebyshev_grid(tree.box_lo[c], tree.box_hi[c], p)
            if tree.is_leaf(c):
                h2.leaf_basis[c] = interpolation_matrix(
                    pts[tree.begin[c]:tree.end[c]],
                    tree.box_lo[c], tree.box_hi[c], p)
            h2.rank[c] = grids[c].shape[0]
        if level > top:
            p_par = _order_schedule(p0, tree.depth, level - 1)
            for c in tree.levels[level]:
                par = tree.parent[c]
                h2.transfer[c] = interpolation_matrix(
                    grids[c], tree.box_lo[par], tree.box_hi[par], p_par)

    for level in partition.levels():
        for s, t in partition.admissible_leaves[level]:
            h2.coupling[(s, t)] = eval_kernel(spec, grids[s], grids[t])
    return h2


def _local_basis(h2, c):
    if h2.tree.is_leaf(c):
        return h2.leaf_basis[c]
    cl, cr = h2.tree.children(c)
    return np.vstack([h2.transfer[cl], h2.transfer[cr]])


def _set_local_basis(h2, c, q):
    if h2.tree.is_leaf(c):
        h2.leaf_basis[c] = q
    else:
        cl, cr = h2.tree.children(c)
        kl = h2.rank[cl]
        h2.transfer[cl] = np.ascontiguousarray(q[:kl])
        h2.transfer[cr] = np.ascontiguousarray(q[kl:])


def _orthonormalize_bases(h2, pair_index, top, depth):
    """Bottom-up sweep replacing each local basis by its thin-QR factor.

    The triangular factor folds into the cluster's couplings and its own
    transfer, so the represented operator is unchanged.  Parents see the
    updated transfers because each level finishes before the one above.
    """
    for level in range(depth, top - 1, -1):
        for c in h2.tree.levels[level]:
            b = _local_basis(h2, c)
            q, r = np.linalg.qr(b, mode="reduced")
            _set_local_basis(h2, c, q)
            h2.rank[c] = q.shape[1]
            for key, transposed in pair_index[level].get(c, ()):
                if transposed:
                    h2.coupling[key] = h2.coupling[key] @ r.T
                else:
                    h2.coupling[key] = r @ h2.coupling[key]
            if c in h2.transfer:
                h2.transfer[c] = r @ h2.transfer[c]


def orthogonalize_recompress(h2, eps):
    """Orthonormalize all bases, then truncate them to tolerance eps.

    First pass sweeps the tree bottom-up replacing each local basis by its
    thin-QR factor.  Second pass sweeps top-down truncating each basis
    against the singular values of its total coupling weight, the parent's
    kept weight included, at relative tolerance eps.  With eps = 0 only
    exact rank deficiency is removed.  Truncating a cluster row-truncates
    its transfer after the parent stack was already cut, which leaves the
    stacks orthonormal only up to the discarded weight, so a final
    bottom-up sweep restores exact orthonormality.  In place.
    """
    part = h2.partition
    top = part.top_level
    if top is None:
        return h2
    depth = h2.tree.depth
    pair_index = {lv: part.coupling_index(lv) for lv in part.levels()}

    _orthonormalize_bases(h2, pair_index, top, depth)

    kept_sigma = {}
    for level in range(top, depth + 1):
        for c in h2.tree.levels[level]:
            parts = []
            oriented = pair_index[level].get(c, ())
            for key, transposed in oriented:
                s_blk = h2.coupling[key]
                parts.append(s_blk.T if transposed else s_blk)
            if c in h2.transfer and kept_sigma[h2.tree.parent[c]].size:
                parts.append(h2.transfer[c] * kept_sigma[h2.tree.parent[c]])
            if parts:
                weight = np.hstack(parts)
                u, sig, _ = np.linalg.svd(weight, full_matrices=False)
                cutoff = eps * sig[0] if sig.size else 0.0
                k = int(np.sum(sig > cutoff))
            else:
                u = np.zeros((h2.rank[c], 0))
                sig = np.zeros(0)
                k = 0
            uk = u[:, :k]
            _set_local_basis(h2, c, _local_basis(h2, c) @ uk)
            if c in h2.transfer:
                h2.transfer[c] = uk.T @ h2.transfer[c]
            for key, transposed in oriented:
                if transposed:
                    h2.coupling[key] = h2.coupling[key] @ uk
                else:
                    h2.coupling[key] = uk.T @ h2.coupling[key]
            kept_sigma[c] = sig[:k]
            h2.rank[c] = k

    _orthonormalize_bases(h2, pair_index, top, depth)
    return h2


def _upward_coefficients(h2, x):
    xhat = {}
    top = h2.partition.top_level
    for level in range(h2.tree.depth, top - 1, -1):
        for c in h2.tree.levels[level]:
            if h2.tree.is_leaf(c):
                xhat[c] = h2.leaf_basis[c].T @ x[h2.tree.begin[c]:h2.tree.end[c]]
            else:
                cl, cr = h2.tree.children(c)
                xhat[c] = h2.transfer[cl].T @ xhat[cl] + h2.transfer[cr].T @ xhat[cr]
    return xhat


def matvec(h2, x):
    """y = A x in tree order."""
    x = np.asarray(x, dtype=np.float64)
    y = np.zeros_like(x)
    tree = h2.tree
    part = h2.partition

    for (s, t), blk in h2.dense.items():
        y[tree.begin[s]:tree.end[s]] += blk @ x[tree.begin[t]:tree.end[t]]
        if s != t:
            y[tree.begin[t]:tree.end[t]] += blk.T @ x[tree.begin[s]:tree.end[s]]

    top = part.top_level
    if top is None:
        return y

    xhat = _upward_coefficients(h2, x)
    yhat = {c: np.zeros(h2.rank[c]) for c in xhat}
    for (s, t), s_blk in h2.coupling.items():
        yhat[s] += s_blk @ xhat[t]
        yhat[t] += s_blk.T @ xhat[s]

    for level in range(top, tree.depth + 1):
        for c in tree.levels[level]:
            if tree.is_leaf(c):
                y[tree.begin[c]:tree.end[c]] += h2.leaf_basis[c] @ yhat[c]
            else:
                cl, cr = tree.children(c)
                yhat[cl] += h2.transfer[cl] @ yhat[c]
                yhat[cr] += h2.transfer[cr] @ yhat[c]
    return y


def estimate_norm2(h2, iters=30, seed=20240901):
    """Spectral norm estimate by power iteration with a fixed seed."""
    rng = np.random.Generator(np.random.Philox(seed))
    v = rng.standard_normal(h2.n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = matvec(h2, v)
        est = float(np.linalg.norm(w))
        if est == 0.0:
            return 0.0
        v = w / est
    return est


def _orth_residual(resid, scale):
    """Orthonormal basis of the numerically significant range of resid."""
    if resid.shape[1] == 0:
        return np.zeros((resid.shape[0], 0))
    u, sig, _ = np.linalg.svd(resid, full_matrices=False)
    k = int(np.sum(sig > 1e-12 * max(scale, 1e-300)))
    return u[:, :k]


def absorb_low_rank(h2, w, eps):
    """Fold a symmetric low-rank term W W^T into the representation.

    Bases are augmented (bottom-up, in coefficient space above the leaves)
    so that every cluster's basis captures its rows of W exactly, coupling
    blocks receive the projected cross terms, dense blocks the explicit
    ones.  Ends with a recompression pass at tolerance eps.  In place.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != h2.n:
        raise ValueError("update factor must be n x r")
    tree = h2.tree
    part = h2.partition
    top = part.top_level

    for (s, t), blk in list(h2.dense.items()):
        ws = w[tree.begin[s]:tree.end[s]]
        wt = w[tree.begin[t]:tree.end[t]]
        h2.dense[(s, t)] = blk + ws @ wt.T

    if top is None:
        return h2

    what = {}
    added = {}
    for level in range(tree.depth, top - 1, -1):
        for c in tree.levels[level]:
            if tree.is_leaf(c):
                target = w[tree.begin[c]:tree.end[c]]
                basis = h2.leaf_basis[c]
            else:
                cl, cr = tree.children(c)
                target = np.vstack([what[cl], what[cr]])
                basis = np.vstack([h2.transfer[cl], h2.transfer[cr]])
            coef = basis.T @ target
            resid = target - basis @ coef
            extra = _orth_residual(resid, float(np.linalg.norm(target)))
            _set_local_basis_cols(h2, c, basis, extra)
            added[c] = extra.shape[1]
            h2.rank[c] += extra.shape[1]
            what[c] = np.vstack([coef, extra.T @ target])
        for c in tree.levels[level]:
            if c in h2.transfer and added[c]:
                pad = np.zeros((added[c], h2.transfer[c].shape[1]))
                h2.transfer[c] = np.vstack([h2.transfer[c], pad])

    for (s, t), s_blk in list(h2.coupling.items()):
        out = np.zeros((h2.rank[s], h2.rank[t]))
        out[: s_blk.shape[0], : s_blk.shape[1]] = s_blk
        out += what[s] @ what[t].T
        h2.coupling[(s, t)] = out

    return orthogonalize_recompress(h2, eps)


def _set_local_basis_cols(h2, c, basis, extra):
    if h2.tree.is_leaf(c):
        h2.leaf_basis[c] = np.hstack([basis, extra])
    else:
        cl, cr = h2.tree.children(c)
        kl = h2.rank[cl]
        stacked = np.hstack([basis, extra])
        h2.transfer[cl] = np.ascontiguousarray(stacked[:kl])
        h2.transfer[cr] = np.ascontiguousarray(stacked[kl:])


def h2_nbytes(h2):
    """Bytes held in numeric blocks of the representation."""
    total = 0
    for store in (h2.leaf_basis, h2.transfer, h2.coupling, h2.dense):
        total += sum(blk.nbytes for blk in store.values())
    return total
