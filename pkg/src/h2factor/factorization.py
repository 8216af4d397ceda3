"""Multilevel direct factorization by block skeletonization.

The matrix arrives in nested-basis hierarchical form.  Level by level,
from the leaves up to the shallowest level holding compressed blocks,
every cluster is skeletonized: its basis is augmented so that fill-in
rows accumulated on the cluster are captured exactly, the local index
space is rotated by a square orthogonal factor whose trailing columns
are the augmented basis, and the leading (redundant) coordinates are
eliminated by a partial LU step whose Schur complement lands on the
dense and fill blocks among the cluster's neighbors.  Skeleton
coordinates of sibling clusters are then merged and the procedure
repeats one level up; whatever remains at the shallowest level is
factored densely with partial pivoting.

Clusters of one level are processed in batches that share no dense or
fill block (color groups refined against the current fill graph, since
fill created mid-level can connect clusters that were independent when
the level started).  Parallel work happens in compute-only tasks whose
results are collected in input order and applied sequentially, so the
factorization is bitwise reproducible for any thread count.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .h2core import estimate_norm2
from .parallel import WorkerPool
from .structure import color_groups, greedy_coloring, level_graph, sparsity_constant
from .timing import PhaseTimer

__all__ = [
    "ClusterFactor",
    "FactorizationError",
    "H2Factorization",
    "LevelRecord",
    "augment_basis",
    "factorize",
    "orthogonal_complement",
    "partial_lu",
]

PIVOT_RTOL = 1e-14

# A Schur update that would create a block between a pair with no existing
# one is dropped when its norm is below this fraction of the fill
# truncation threshold.  Fill magnitude decays with the distance between
# the paired clusters, so the cutoff bounds the interaction degree of
# every cluster and keeps the factorization cost linear; the discarded
# mass sits well inside the truncation budget.
FILL_DROP_FACTOR = 1e-2


class FactorizationError(RuntimeError):
    """A diagonal block of redundant coordinates could not be eliminated."""


def augment_basis(basis, fill_row, eps_fill):
    """Directions of fill_row outside span(basis) that carry weight above
    the fill floor.

    Returns an orthonormal (rows x kept) block orthogonal to basis.  The
    directions come from a QR of the transposed residual followed by an
    SVD of the small triangular factor.  Singular directions at or above
    FILL_DROP_FACTOR * eps_fill are kept, the same floor under which the
    elimination treats newly created fill blocks as zero.  Cutting at the
    larger eps_fill instead leaves residual fill that cascades through
    later Schur updates and, on ill-conditioned operators, pushes the
    backward error past the refinement contraction radius.
    """
    if fill_row.shape[1] == 0 or basis.shape[0] == basis.shape[1]:
        return np.zeros((basis.shape[0], 0))
    resid = fill_row - basis @ (basis.T @ fill_row)
    _, r1 = np.linalg.qr(resid.T, mode="reduced")
    u, sig, _ = np.linalg.svd(r1.T, full_matrices=False)
    kept = int(np.sum(sig >= FILL_DROP_FACTOR * eps_fill))
    vbar = u[:, :kept]
    if kept:
        vbar = vbar - basis @ (basis.T @ vbar)
        vbar = vbar / np.linalg.norm(vbar, axis=0)
    return vbar


def orthogonal_complement(b_aug):
    """Square orthogonal factor [complement | b_aug].

    The trailing columns are exactly b_aug; the leading ones complete it
    to an orthonormal basis of the local index space, so redundant
    coordinates come first and skeleton coordinates last.
    """
    live, k = b_aug.shape
    if k == 0:
        return np.eye(live)
    q, _ = np.linalg.qr(b_aug, mode="complete")
    return np.hstack([q[:, k:], b_aug])


def partial_lu(d_tt, r, gts):
    """Eliminate the leading r coordinates of one cluster.

    d_tt is the projected diagonal block; gts holds the redundant rows of
    every block in the cluster's row, the skeleton part of the diagonal
    first.  Returns the LU factors of the leading r x r block, the
    eliminator blocks -W aligned with gts, and Schur updates keyed by
    unordered participant index pairs (i <= j), each the correction to
    the block coupling participants i and j.
    """
    d_rr = np.ascontiguousarray(d_tt[:r, :r])
    scale = np.abs(d_rr).max() if r else 0.0
    lu, piv = lu_factor(d_rr, check_finite=False)
    if r and np.abs(np.diag(lu)).min() <= PIVOT_RTOL * max(scale, 1e-300):
        raise FactorizationError("vanishing pivot in redundant block")
    widths = [g.shape[1] for g in gts]
    offs = np.concatenate([[0], np.cumsum(widths)]).astype(np.int64)
    g_all = np.hstack(gts) if gts else np.zeros((r, 0))
    w_all = lu_solve((lu, piv), g_all, check_finite=False)
    minus_w = [-w_all[:, offs[i]:offs[i + 1]] for i in range(len(gts))]
    updates = {}
    for i, gi in enumerate(gts):
        row = gi.T @ w_all[:, offs[i]:]
        for j in range(i, len(gts)):
            updates[(i, j)] = -row[:, offs[j] - offs[i]:offs[j + 1] - offs[i]]
    return lu, piv, minus_w, updates


@dataclass
class ClusterFactor:
    """Per-cluster elimination data: the rotation, the LU of the
    redundant block, and the eliminator edges.

    Each edge is (other, kind, mat) with mat of shape (r, w); kind says
    which coordinates of the partner the edge acts on: its whole level
    segment ("full", partner not yet eliminated at that point), only its
    skeleton tail ("skel"), or this cluster's own skeleton tail ("self").
    """

    cluster: int
    level: int
    q: np.ndarray
    r: int
    lu: np.ndarray | None
    piv: np.ndarray | None
    edges: list


@dataclass
class LevelRecord:
    level: int
    clusters: list
    offset: dict
    size: dict
    factors: dict
    batches: list
    up_index: np.ndarray
    csp: int
    ncolors: int
    nbatches: int
    graph_degree: int
    max_rank: int
    time_s: float = 0.0


@dataclass
class H2Factorization:
    tree: object
    n: int
    top_level: int | None
    records: list
    top_lu: np.ndarray
    top_piv: np.ndarray
    top_size: int
    eps_lu: float
    eps_fill: float
    norm_estimate: float
    phase_seconds: dict = field(default_factory=dict)

    def nbytes(self):
        total = self.top_lu.nbytes + self.top_piv.nbytes
        for rec in self.records:
            total += rec.up_index.nbytes
            for fct in rec.factors.values():
                total += fct.q.nbytes
                if fct.lu is not None:
                    total += fct.lu.nbytes + fct.piv.nbytes
                total += sum(mat.nbytes for _, _, mat in fct.edges)
        return total

    def max_rank(self):
        return max((rec.max_rank for rec in self.records), default=0)


class _LevelState:
    __slots__ = (
        "level", "clusters", "offset", "size", "live", "basis", "qt",
        "red", "D", "F", "s_work", "t_work", "s_index", "nbr_d", "nbr_f",
        "done", "factors", "batches",
    )


def factorize(h2, eps_lu, threads=1, norm_estimate=None):
    """Factor a hierarchical matrix for fast solves.

    The input must have orthonormal bases (run orthogonalize_recompress
    after construction); its blocks are not modified.  eps_lu scales the
    absolute fill truncation threshold by an estimate of the matrix
    2-norm.  Raises FactorizationError when a redundant diagonal block
    is numerically singular.
    """
    tree = h2.tree
    part = h2.partition
    timer = PhaseTimer()
    timer.start("norm")
    if norm_estimate is None:
        norm_estimate = estimate_norm2(h2)
    eps_fill = float(eps_lu) * norm_estimate

    records = []
    top = part.top_level
    with WorkerPool(threads) as pool:
        if top is None:
            timer.switch("top")
            top_mat, top_size = _dense_only_top(h2)
        else:
            state = None
            for level in range(tree.depth, top - 1, -1):
                t_level = time.perf_counter()
                timer.switch("extract")
                state = _init_level(h2, level, state)
                timer.switch("color")
                groups, csp, ncolors, degree = _color_level(part, state)
                for group in groups:
                    _process_group(state, group, eps_fill, pool, timer)
                timer.switch("transition")
                if level > top:
                    carried = _transition(h2, part, state)
                else:
                    top_mat, top_size = _finish_top(part, state)
                    carried = None
                records.append(LevelRecord(
                    level=level,
                    clusters=state.clusters,
                    offset=state.offset,
                    size=state.size,
                    factors=state.factors,
                    batches=state.batches,
                    up_index=_up_index(state),
                    csp=csp,
                    ncolors=ncolors,
                    nbatches=len(state.batches),
                    graph_degree=degree,
                    max_rank=max(state.live[c] for c in state.clusters),
                    time_s=time.perf_counter() - t_level,
                ))
                state = carried
        timer.switch("top")
        scale_top = np.abs(top_mat).max() if top_size else 0.0
        top_lu, top_piv = lu_factor(top_mat, overwrite_a=True, check_finite=False)
        if top_size and np.abs(np.diag(top_lu)).min() <= PIVOT_RTOL * max(scale_top, 1e-300):
            raise FactorizationError("singular block at the final dense solve")
    timer.stop()

    return H2Factorization(
        tree=tree, n=tree.n, top_level=top, records=records,
        top_lu=top_lu, top_piv=top_piv, top_size=top_size,
        eps_lu=float(eps_lu), eps_fill=eps_fill, norm_estimate=norm_estimate,
        phase_seconds=dict(timer.seconds),
    )


def _dense_only_top(h2):
    """No admissible blocks anywhere: gather the dense leaf blocks into
    one matrix in tree order."""
    tree = h2.tree
    n = tree.n
    top = np.zeros((n, n))
    for (s, t), blk in h2.dense.items():
        rs, cs = tree.begin[s], tree.begin[t]
        top[rs:rs + blk.shape[0], cs:cs + blk.shape[1]] = blk
        if s != t:
            top[cs:cs + blk.shape[1], rs:rs + blk.shape[0]] = blk.T
    return top, n


def _init_level(h2, level, carried):
    tree = h2.tree
    part = h2.partition
    if carried is None:
        st = _LevelState()
        st.level = level
        st.clusters = [int(c) for c in tree.levels[level]]
        st.offset = {c: int(tree.begin[c]) for c in st.clusters}
        st.size = {c: int(tree.end[c] - tree.begin[c]) for c in st.clusters}
        st.basis = {c: h2.leaf_basis[c] for c in st.clusters}
        st.D = {}
        for key, blk in h2.dense.items():
            assert tree.level[key[0]] == level and tree.level[key[1]] == level
            st.D[key] = blk.copy()
        st.F = {}
    else:
        st = carried
    st.live = dict(st.size)
    st.s_work = {key: h2.coupling[key] for key in part.admissible_leaves[level]}
    st.s_index = part.coupling_index(level)
    st.t_work = (
        {c: h2.transfer[c] for c in st.clusters} if level > part.top_level else {}
    )
    st.nbr_d = {}
    st.nbr_f = {}
    for key in st.D:
        s, t = key
        if s != t:
            st.nbr_d.setdefault(s, []).append(key)
            st.nbr_d.setdefault(t, []).append(key)
    for key in st.F:
        s, t = key
        st.nbr_f.setdefault(s, []).append(key)
        st.nbr_f.setdefault(t, []).append(key)
    st.qt = {}
    st.red = {}
    st.done = set()
    st.factors = {}
    st.batches = []
    return st


def _color_level(part, state):
    pairs = [key for key in state.D if key[0] != key[1]]
    pairs += list(state.F)
    graph = level_graph(state.clusters, pairs)
    colors = greedy_coloring(graph)
    groups = color_groups(colors)
    degree = max((len(v) for v in graph.values()), default=0)
    return groups, sparsity_constant(part, state.level), len(groups), degree


def _neighbor_entries(state, c):
    """Sorted (other, key, in_dense) over off-diagonal blocks touching c."""
    entries = []
    for key in state.nbr_d.get(c, ()):
        entries.append((key[0] if key[1] == c else key[1], key, True))
    for key in state.nbr_f.get(c, ()):
        entries.append((key[0] if key[1] == c else key[1], key, False))
    entries.sort()
    return entries




def _pick_batch(state, remaining):
    """Greedy independent set in the current dense+fill graph."""
    chosen = []
    chosen_set = set()
    for c in remaining:
        nbrs = {other for other, _, _ in _neighbor_entries(state, c)}
        if nbrs.isdisjoint(chosen_set):
            chosen.append(c)
            chosen_set.add(c)
    return chosen


def _process_group(state, group, eps_fill, pool, timer):
    remaining = list(group)
    while remaining:
        batch = _pick_batch(state, remaining)
        batch_set = set(batch)
        remaining = [c for c in remaining if c not in batch_set]
        state.batches.append(batch)
        _augment_batch(state, batch, eps_fill, pool, timer)
        _project_batch(state, batch, batch_set, pool, timer)
        _eliminate_batch(state, batch, eps_fill, pool, timer)


def _augment_batch(state, batch, eps_fill, pool, timer):
    timer.switch("augment")

    def task(c):
        b = state.basis[c]
        cols = []
        for key in sorted(state.nbr_f.get(c, ())):
            blk = state.F[key]
            cols.append(blk if key[0] == c else blk.T)
        row = np.hstack(cols) if cols else np.zeros((b.shape[0], 0))
        vbar = augment_basis(b, row, eps_fill)
        b_aug = np.hstack([b, vbar]) if vbar.shape[1] else b
        return c, b_aug, orthogonal_complement(b_aug), vbar.shape[1]

    for c, b_aug, qt, kept in pool.map(task, batch):
        state.basis[c] = b_aug
        state.qt[c] = qt
        state.red[c] = qt.shape[0] - b_aug.shape[1]
        if kept:
            for key, transposed in state.s_index.get(c, ()):
                s_blk = state.s_work[key]
                if transposed:
                    state.s_work[key] = np.hstack(
                        [s_blk, np.zeros((s_blk.shape[0], kept))])
                else:
                    state.s_work[key] = np.vstack(
                        [s_blk, np.zeros((kept, s_blk.shape[1]))])
            if c in state.t_work:
                t_blk = state.t_work[c]
                state.t_work[c] = np.vstack(
                    [t_blk, np.zeros((kept, t_blk.shape[1]))])


def _project_batch(state, batch, batch_set, pool, timer):
    timer.switch("project")
    keys_d = {(c, c) for c in batch}
    keys_f = set()
    for c in batch:
        keys_d.update(state.nbr_d.get(c, ()))
        keys_f.update(state.nbr_f.get(c, ()))
    items = [(True, key) for key in sorted(keys_d)]
    items += [(False, key) for key in sorted(keys_f)]

    def task(item):
        in_dense, key = item
        blk = (state.D if in_dense else state.F)[key]
        if key[0] in batch_set:
            blk = state.qt[key[0]].T @ blk
        if key[1] in batch_set:
            blk = blk @ state.qt[key[1]]
        return item, blk

    for (in_dense, key), blk in pool.map(task, items):
        (state.D if in_dense else state.F)[key] = blk


def _eliminate_batch(state, batch, eps_fill, pool, timer):
    timer.switch("partial_lu")
    drop_tol = FILL_DROP_FACTOR * eps_fill

    def task(c):
        r = state.red[c]
        entries = _neighbor_entries(state, c)
        if r == 0:
            return c, None, None, [], {}, entries
        d_cc = state.D[(c, c)]
        gts = [np.ascontiguousarray(d_cc[:r, r:])]
        for _, key, in_dense in entries:
            blk = (state.D if in_dense else state.F)[key]
            gt = blk[:r, :] if key[0] == c else blk[:, :r].T
            gts.append(np.ascontiguousarray(gt))
        try:
            lu, piv, minus_w, updates = partial_lu(d_cc, r, gts)
        except FactorizationError as exc:
            raise FactorizationError(
                f"cluster {c} at level {state.level}: {exc}") from exc
        edges = [(c, "self", minus_w[0])]
        for (other, _, _), mat in zip(entries, minus_w[1:]):
            kind = "skel" if other in state.done else "full"
            edges.append((other, kind, mat))
        return c, lu, piv, edges, updates, entries

    results = pool.map(task, batch)

    for c, lu, piv, edges, updates, entries in results:
        r = state.red[c]
        ids = [c] + [other for other, _, _ in entries]
        for (i, j), val in updates.items():
            _apply_update(state, c, r, ids[i], i == 0, ids[j], j == 0, val,
                          drop_tol)
        state.factors[c] = ClusterFactor(
            cluster=c, level=state.level, q=state.qt.pop(c), r=r,
            lu=lu, piv=piv, edges=edges,
        )

    for c, _, _, _, _, _ in results:
        _slice_cluster(state, c)


def _apply_update(state, c, r, id_i, self_i, id_j, self_j, val, drop_tol):
    if self_i and self_j:
        state.D[(c, c)][r:, r:] += val
        return
    if self_i:
        if c <= id_j:
            key = (c, id_j)
            blk, flip = _find_block(state, key), False
        else:
            key = (id_j, c)
            blk, flip = _find_block(state, key), True
        if flip:
            blk[:, r:] += val.T
        else:
            blk[r:, :] += val
        return
    key = (id_i, id_j)
    if key in state.D:
        state.D[key] += val
        return
    blk = state.F.get(key)
    if blk is not None:
        blk += val
        return
    # new fill between two neighbors of c; the pair cannot be dense at
    # this level, otherwise its block would already exist
    if np.linalg.norm(val) > drop_tol:
        state.F[key] = val
        state.nbr_f.setdefault(id_i, []).append(key)
        state.nbr_f.setdefault(id_j, []).append(key)


def _find_block(state, key):
    blk = state.D.get(key)
    return blk if blk is not None else state.F[key]


def _slice_cluster(state, c):
    r = state.red[c]
    if r:
        diag = state.D[(c, c)]
        state.D[(c, c)] = diag[r:, r:].copy()
        for _, key, in_dense in _neighbor_entries(state, c):
            store = state.D if in_dense else state.F
            blk = store[key]
            store[key] = blk[r:, :].copy() if key[0] == c else blk[:, r:].copy()
        state.live[c] -= r
    state.done.add(c)


def _up_index(state):
    parts = [
        np.arange(state.offset[c] + state.red[c],
                  state.offset[c] + state.size[c], dtype=np.int64)
        for c in state.clusters
    ]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)


def _skel_block(state, a, b):
    """Block coupling the skeletons of a and b after both are eliminated:
    a dense block, or a padded coupling plus any fill."""
    key = (a, b) if a <= b else (b, a)
    blk = state.D.get(key)
    if blk is None:
        blk = state.s_work[key]
        f_blk = state.F.get(key)
        if f_blk is not None:
            blk = blk + f_blk
    return blk if a <= b else blk.T


def _transition(h2, part, state):
    tree = h2.tree
    next_level = state.level - 1
    nxt = _LevelState()
    nxt.level = next_level
    nxt.clusters = [int(c) for c in tree.levels[next_level]]
    nxt.basis = {}
    nxt.offset = {}
    nxt.size = {}
    pos = 0
    for p in nxt.clusters:
        a, b = tree.children(p)
        nxt.basis[p] = np.vstack([state.t_work[a], state.t_work[b]])
        nxt.size[p] = state.live[a] + state.live[b]
        assert nxt.basis[p].shape[0] == nxt.size[p]
        nxt.offset[p] = pos
        pos += nxt.size[p]

    nxt.D = {}
    for s, t in part.dense_pairs(next_level):
        sub = [[_skel_block(state, ca, cb) for cb in tree.children(t)]
               for ca in tree.children(s)]
        nxt.D[(s, t)] = np.block(sub)

    nxt.F = {}
    for key in sorted(state.F):
        a, b = key
        if part.is_admissible_leaf(state.level, a, b):
            continue
        p, q = int(tree.parent[a]), int(tree.parent[b])
        assert p < q and (p, q) not in nxt.D
        blk = nxt.F.get((p, q))
        if blk is None:
            blk = np.zeros((nxt.size[p], nxt.size[q]))
            nxt.F[(p, q)] = blk
        left_p, _ = tree.children(p)
        left_q, _ = tree.children(q)
        ro = 0 if a == left_p else state.live[left_p]
        co = 0 if b == left_q else state.live[left_q]
        blk[ro:ro + state.live[a], co:co + state.live[b]] += state.F[key]
    return nxt


def _finish_top(part, state):
    offs = {}
    pos = 0
    for c in state.clusters:
        offs[c] = pos
        pos += state.live[c]
    top = np.zeros((pos, pos))

    def place(s, t, blk):
        top[offs[s]:offs[s] + blk.shape[0], offs[t]:offs[t] + blk.shape[1]] = blk
        if s != t:
            top[offs[t]:offs[t] + blk.shape[1], offs[s]:offs[s] + blk.shape[0]] = blk.T

    for s, t in part.dense_pairs(state.level):
        place(s, t, state.D[(s, t)])
    for s, t in part.admissible_leaves[state.level]:
        blk = state.s_work[(s, t)]
        f_blk = state.F.get((s, t))
        if f_blk is not None:
            blk = blk + f_blk
        place(s, t, blk)
    leftovers = [k for k in state.F
                 if not part.is_admissible_leaf(state.level, *k)]
    assert not leftovers, "fill above the shallowest compressed level"
    return top, pos
