"""Inversion of a hierarchical hermitian matrix by recursive skeletonization.

Working state at level ``l`` (cells of the tree at that level):

* ``labels[c]``: active degrees of freedom of cell ``c`` (original indices),
* ``near[c, d]``: dense block between active DOFs of neighbor cells,
* ``far``: for every low-rank pair ``(j, a, J)`` still in play (``j <= l``,
  ``a`` an ancestor of the current cells at level ``j``) the coefficient
  matrices ``Vt[c]`` with ``A[a, J] = Vt_{aJ}^H B_{aJ} Vt_{Ja}``, kept per
  current cell ``c`` so they can be updated in place.

A cell step compresses the columns of a cell against everything outside it
(near rows plus ``B^H Vt`` rows of all far pairs) with an interpolative
decomposition, zeroes the redundant columns, eliminates them with a
Cholesky factor, and updates the remaining blocks exactly.  In 2-D an edge
step follows: surviving DOFs are regrouped by nearest cell edge and
skeletonized again, leaving blocks outside the edge unchanged.  Children
are then merged and the process repeats one level up.  The root block is
factored by dense LU.

The result applies ``G = R_1 ... R_S A_root^{-1} R_S^H ... R_1^H``.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .dense import cholesky, id_decompose
from .errors import InvalidInputError, NotPositiveDefiniteError

__all__ = ["InverseFactorization", "SkeletonFactor", "apply_inverse", "invert_hmatrix",
           "invert_hmatrix2d", "invert_hodlr"]


@dataclass(eq=False)
class SkeletonFactor:
    """One local factor ``x_old[rows] = F @ x_new[cols]``.

    ``cols`` lists the redundant DOFs followed by the skeleton DOFs; ``rows``
    is the cell's DOF list in its original order.  ``F = S Z M`` where ``S``
    is the optional Cholesky scaling, ``Z`` the zeroing and ``M`` the
    elimination matrix.
    """

    kind: str
    level: int
    node: object
    rows: np.ndarray
    cols: np.ndarray
    nred: int
    F: np.ndarray
    T: np.ndarray
    Lrr: np.ndarray
    Y: np.ndarray
    perm: np.ndarray
    Lscale: np.ndarray = None

    @property
    def redundant(self):
        return self.cols[:self.nred]

    @property
    def skeleton(self):
        return self.cols[self.nred:]

    def apply_local(self, x):
        """``F @ x`` with ``x`` in ``cols`` order."""
        return self.F @ x

    def solve_local(self, y):
        """``F^{-1} @ y`` with ``y`` in ``rows`` order, using the triangular structure."""
        y = np.asarray(y, dtype=np.complex128)
        if self.Lscale is not None:
            y = self.Lscale.conj().T @ y
        w = y[self.perm]
        k = self.nred
        wr, ws = w[:k], w[k:]
        ws = ws + self.T @ wr
        ur = self.Lrr.conj().T @ (wr - self.Y @ ws)
        return np.concatenate([ur, ws])


@dataclass(eq=False)
class InverseFactorization:
    N: int
    factors: list
    stages: list
    root_labels: np.ndarray
    root_lu: tuple
    active_history: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    @property
    def nnz(self):
        return int(sum(s.nnz for s in self.stages) + self.root_labels.size ** 2)

    def apply(self, v):
        return apply_inverse(self, v)


def apply_inverse(g, v, adjoint=False):
    """``G @ v`` (or ``G^H @ v``) for a vector or block of column vectors."""
    v = np.asarray(v, dtype=np.complex128)
    if v.shape[0] != g.N:
        raise InvalidInputError(f"vector length {v.shape[0]} does not match N={g.N}")
    y = v
    for st in g.stages:
        y = st.adj @ y
    y = np.array(y, dtype=np.complex128, copy=True)
    if g.root_labels.size:
        y[g.root_labels] = sla.lu_solve(g.root_lu, y[g.root_labels], trans=2 if adjoint else 0)
    for st in reversed(g.stages):
        y = st @ y
    return y


def _stage_matrix(N, factors):
    rows, cols, vals = [], [], []
    touched = np.zeros(N, dtype=bool)
    for f in factors:
        r, c = np.meshgrid(f.rows, f.cols, indexing="ij")
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(f.F.ravel())
        touched[f.rows] = True
    free = np.flatnonzero(~touched)
    rows.append(free)
    cols.append(free)
    vals.append(np.ones(free.size, dtype=np.complex128))
    M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N, N)).tocsr()
    M.adj = M.conj().T.tocsr()
    return M


def _hermitize(A):
    return 0.5 * (A + A.conj().T)


def _eliminate(A, T, ridx, sidx):
    """Zero and eliminate the redundant block; returns (X, Y, Lrr, Schur)."""
    Arr = A[np.ix_(ridx, ridx)]
    Ars = A[np.ix_(ridx, sidx)]
    Asr = A[np.ix_(sidx, ridx)]
    Ass = A[np.ix_(sidx, sidx)]
    TH = T.conj().T
    Arr_t = Arr - TH @ Asr - Ars @ T + TH @ Ass @ T
    Asr_t = Asr - Ass @ T
    Lrr = cholesky(_hermitize(Arr_t), herm_tol=np.inf)
    X = sla.solve_triangular(Lrr, np.eye(len(ridx)), lower=True, trans="C")
    Y = -sla.cho_solve((Lrr, True), Asr_t.conj().T)
    schur = _hermitize(Ass + Asr_t @ Y)
    return X, Y, Lrr, schur


def _local_factor(T, X, Y):
    k, s = X.shape[0], T.shape[0]
    F = np.zeros((k + s, k + s), dtype=np.complex128)
    F[:k, :k] = X
    F[:k, k:] = Y
    F[k:, :k] = -T @ X
    F[k:, k:] = np.eye(s) - T @ Y
    return F


class _State:
    def __init__(self, h):
        self.h = h
        self.tree = h.tree
        self.level = h.levels
        L = h.levels
        leaves = self.tree.cells[L]
        self.labels = {c: leaves[c].copy() for c in range(len(leaves))}
        self.near = {k: v.copy() for k, v in h.near.items()}
        self.mid = {}
        self.vt = {}
        for (j, I, J), f in h.lowrank.items():
            if f.rank == 0:
                continue
            self.mid[j, I, J] = f.mid
            self.mid[j, J, I] = f.mid.conj().T
            for a, basis in ((I, f.left), (J, f.right)):
                cells_a = self.tree.cells[j][a]
                part = {}
                for c in self._descendants(j, a, L):
                    pos = np.searchsorted(cells_a, leaves[c])
                    part[c] = basis[pos].conj().T.copy()
                self.vt[j, a, J if a == I else I] = part
        # (j, a) -> list of partners J with a live far pair
        self.partners = {}
        for (j, a, J) in self.vt:
            self.partners.setdefault((j, a), []).append(J)
        for v in self.partners.values():
            v.sort()

    def _descendants(self, j, a, level):
        t = self.tree
        if level == j:
            return [a]
        shift = level - j
        ac = t.coords(j, a)
        out = []
        m = 2 ** shift
        if t.dim == 1:
            return list(range(ac[0] * m, (ac[0] + 1) * m))
        for u in range(m):
            for w in range(m):
                out.append(t.flat(level, (ac[0] * m + u, ac[1] * m + w)))
        return out

    def ancestor(self, c, j):
        t = self.tree
        shift = self.level - j
        return t.flat(j, [k >> shift for k in t.coords(self.level, c)])

    def far_pairs(self, c):
        for j in range(1, self.level + 1):
            a = self.ancestor(c, j)
            for J in self.partners.get((j, a), ()):
                yield j, a, J

    def neighbors(self, c):
        lists = self.h.lists[self.level]
        return lists.neighbor[c]

    def drop_columns(self, c, keep):
        """Restrict every stored block touching cell ``c`` to positions ``keep``."""
        for d in self.neighbors(c):
            if d == c:
                self.near[c, c] = self.near[c, c][np.ix_(keep, keep)]
            else:
                self.near[d, c] = self.near[d, c][:, keep]
                self.near[c, d] = self.near[c, d][keep]
        for key in self.far_pairs(c):
            self.vt[key][c] = self.vt[key][c][:, keep]
        self.labels[c] = self.labels[c][keep]


def _cell_stack(st, c):
    blocks = [st.near[d, c] for d in st.neighbors(c) if d != c]
    for key in st.far_pairs(c):
        blocks.append(st.mid[key].conj().T @ st.vt[key][c])
    n = len(st.labels[c])
    blocks = [b for b in blocks if b.shape[0]]
    if not blocks:
        return np.zeros((0, n), dtype=np.complex128)
    return np.vstack(blocks)


def _scale_cell(st, c):
    """Replace the diagonal block of ``c`` by the identity; returns ``L``."""
    L = cholesky(_hermitize(st.near[c, c]), herm_tol=np.inf)
    Sc = sla.solve_triangular(L, np.eye(L.shape[0]), lower=True, trans="C")
    for d in st.neighbors(c):
        if d != c:
            st.near[d, c] = st.near[d, c] @ Sc
            st.near[c, d] = st.near[d, c].conj().T
    for key in st.far_pairs(c):
        st.vt[key][c] = st.vt[key][c] @ Sc
    st.near[c, c] = np.eye(L.shape[0], dtype=np.complex128)
    return L, Sc


def _cell_step(st, c, tol, scaled, max_rank):
    I = st.labels[c]
    n = len(I)
    if n == 0:
        return None
    Lscale = Sc = None
    if scaled:
        Lscale, Sc = _scale_cell(st, c)
    stack = _cell_stack(st, c)
    res = id_decompose(stack, tol=tol, max_rank=max_rank) if stack.shape[0] else None
    if res is None:
        skel, red = np.zeros(0, dtype=np.intp), np.arange(n)
        T = np.zeros((0, n), dtype=np.complex128)
    else:
        skel, red, T = res.skeleton, res.redundant, res.interp
    if len(red) == 0:
        if scaled:
            raise _Unscaled()
        return None
    A = st.near[c, c]
    X, Y, Lrr, schur = _eliminate(A, T, red, skel)
    Floc = _local_factor(T, X, Y)
    perm = np.concatenate([red, skel])
    k = len(red)
    Fs = Floc[:, k:]
    for d in st.neighbors(c):
        if d != c:
            st.near[d, c] = st.near[d, c][:, perm] @ Fs
            st.near[c, d] = st.near[d, c].conj().T
    for key in st.far_pairs(c):
        st.vt[key][c] = st.vt[key][c][:, perm] @ Fs
    st.near[c, c] = schur
    st.labels[c] = I[skel]
    if scaled:
        Ftot = Sc[:, perm] @ Floc
    else:
        Ftot = np.empty_like(Floc)
        Ftot[perm] = Floc
    return SkeletonFactor("cell", st.level, int(c), I.copy(), I[perm], k, Ftot,
                          T, Lrr, Y, perm, Lscale)


class _Unscaled(Exception):
    """Scaled step found nothing to eliminate; its scaling must be undone."""


def _snapshot(st, c):
    nb = {(d, c): st.near[d, c] for d in st.neighbors(c)}
    nb.update({(c, d): st.near[c, d] for d in st.neighbors(c)})
    vt = {key: st.vt[key][c] for key in st.far_pairs(c)}
    return nb, vt, st.labels[c]


def _restore(st, c, snap):
    nb, vt, lab = snap
    st.near.update(nb)
    for key, v in vt.items():
        st.vt[key][c] = v
    st.labels[c] = lab


def _skeletonize_cell(st, c, tol, scaled, max_rank):
    snap = _snapshot(st, c)
    if not scaled:
        try:
            return _cell_step(st, c, tol, False, max_rank)
        except NotPositiveDefiniteError:
            _restore(st, c, snap)
    try:
        return _cell_step(st, c, tol, True, max_rank)
    except _Unscaled:
        _restore(st, c, snap)
        return None
    except NotPositiveDefiniteError as exc:
        _restore(st, c, snap)
        raise NotPositiveDefiniteError(
            f"cell {c} at level {st.level}: {exc}", pivot=exc.pivot, level=st.level, node=int(c))


def _edge_assignment(st):
    """Map edge key -> {cell: local positions} for every active DOF."""
    t = st.tree
    m = t.per_axis(st.level)
    s = t.n // m
    edges = {}
    for c, lab in st.labels.items():
        if len(lab) == 0:
            continue
        c0, c1 = t.coords(st.level, c)
        u0 = lab // t.n - c0 * s
        u1 = lab % t.n - c1 * s
        dist = np.stack([u0 + 0.5, s - 0.5 - u0, u1 + 0.5, s - 0.5 - u1], axis=1)
        keys = [(0, c0 % m, c1), (0, (c0 + 1) % m, c1), (1, c1 % m, c0), (1, (c1 + 1) % m, c0)]
        # stable tie-break: smaller (axis, line) key wins
        order = sorted(range(4), key=lambda q: keys[q])
        dsorted = dist[:, order]
        choice = np.array(order)[np.argmin(dsorted, axis=1)]
        for q in range(4):
            pos = np.flatnonzero(choice == q)
            if pos.size:
                edges.setdefault(keys[q], {})[c] = pos
    return edges


def _edge_cells(st, key):
    t = st.tree
    m = t.per_axis(st.level)
    axis, line, other = key
    if axis == 0:
        return t.flat(st.level, (line - 1, other)), t.flat(st.level, (line, other))
    return t.flat(st.level, (other, line - 1)), t.flat(st.level, (other, line))


def _edge_step(st, key, members, tol, max_rank):
    """Skeletonize the DOFs assigned to one edge; blocks outside are kept."""
    cells = sorted(members)
    lab_pos = {c: members[c] for c in cells}
    # current positions may have shifted if an earlier edge dropped DOFs
    ids = {c: st.labels[c][lab_pos[c]] for c in cells}
    widths = [len(lab_pos[c]) for c in cells]
    n = sum(widths)
    if n == 0:
        return None
    offs = np.concatenate([[0], np.cumsum(widths)])
    rows = []
    nbrs = sorted(set().union(*[set(st.neighbors(c).tolist()) for c in cells]))
    for d in nbrs:
        excl = np.zeros(len(st.labels[d]), dtype=bool)
        if d in lab_pos:
            excl[lab_pos[d]] = True
        keep = np.flatnonzero(~excl)
        if keep.size == 0:
            continue
        blk = np.zeros((keep.size, n), dtype=np.complex128)
        for q, c in enumerate(cells):
            if (d, c) in st.near and d in st.neighbors(c):
                blk[:, offs[q]:offs[q + 1]] = st.near[d, c][np.ix_(keep, lab_pos[c])]
        rows.append(blk)
    far = {}
    for q, c in enumerate(cells):
        for k in st.far_pairs(c):
            blk = far.setdefault(k, np.zeros((st.mid[k].shape[1], n), dtype=np.complex128))
            blk[:, offs[q]:offs[q + 1]] += st.mid[k].conj().T @ st.vt[k][c][:, lab_pos[c]]
    rows.extend(far.values())
    rows = [r for r in rows if r.shape[0]]
    stack = np.vstack(rows) if rows else np.zeros((0, n), dtype=np.complex128)
    if stack.shape[0]:
        res = id_decompose(stack, tol=tol, max_rank=max_rank)
        skel, red, T = res.skeleton, res.redundant, res.interp
    else:
        skel, red = np.zeros(0, dtype=np.intp), np.arange(n)
        T = np.zeros((0, n), dtype=np.complex128)
    if len(red) == 0:
        return None
    A = np.zeros((n, n), dtype=np.complex128)
    for q, c in enumerate(cells):
        for p, d in enumerate(cells):
            A[offs[q]:offs[q + 1], offs[p]:offs[p + 1]] = st.near[c, d][np.ix_(lab_pos[c], lab_pos[d])]
    try:
        X, Y, Lrr, schur = _eliminate(A, T, red, skel)
    except NotPositiveDefiniteError as exc:
        raise NotPositiveDefiniteError(f"edge {key} at level {st.level}: {exc}",
                                       pivot=exc.pivot, level=st.level, node=key)
    Floc = _local_factor(T, X, Y)
    perm = np.concatenate([red, skel])
    allids = np.concatenate([ids[c] for c in cells])
    F = np.empty_like(Floc)
    F[perm] = Floc
    factor = SkeletonFactor("edge", st.level, key, allids.copy(), allids[perm], len(red), F,
                            T, Lrr, Y, perm)
    # write the Schur complement into the skeleton x skeleton positions
    owner = np.searchsorted(offs, np.arange(n), side="right") - 1
    sk_by_cell = {c: skel[owner[skel] == q] for q, c in enumerate(cells)}
    schur_pos = {c: np.flatnonzero(owner[skel] == q) for q, c in enumerate(cells)}
    for c in cells:
        for d in cells:
            rc = lab_pos[c][sk_by_cell[c] - offs[cells.index(c)]]
            rd = lab_pos[d][sk_by_cell[d] - offs[cells.index(d)]]
            st.near[c, d][np.ix_(rc, rd)] = schur[np.ix_(schur_pos[c], schur_pos[d])]
    for q, c in enumerate(cells):
        red_local = lab_pos[c][red[owner[red] == q] - offs[q]]
        keep = np.setdiff1d(np.arange(len(st.labels[c])), red_local)
        st.drop_columns(c, keep)
    return factor


def _edge_phase(st, tol, max_rank):
    factors = []
    edges = _edge_assignment(st)
    # DOF ids stay fixed; positions are recomputed per edge after drops
    edge_ids = {key: {c: st.labels[c][pos] for c, pos in mem.items()} for key, mem in edges.items()}
    for key in sorted(edge_ids):
        members = {}
        for c, idv in edge_ids[key].items():
            pos = np.flatnonzero(np.isin(st.labels[c], idv))
            if pos.size:
                members[c] = pos
        if not members:
            continue
        f = _edge_step(st, key, members, tol, max_rank)
        if f is not None:
            factors.append(f)
    return factors


def _merge(st):
    """Move from level ``l`` to ``l - 1``."""
    t = st.tree
    l = st.level
    pl = l - 1
    lists_l = st.h.lists[l]
    new_labels = {}
    kids = {}
    for p in range(t.num_cells(pl)):
        ch = t.children(pl, p)
        kids[p] = ch
        new_labels[p] = np.concatenate([st.labels[c] for c in ch])

    def pair_block(c, d):
        if (c, d) in st.near:
            return st.near[c, d]
        key_c = (l, c, d)
        if key_c in st.vt:
            return st.vt[key_c][c].conj().T @ st.mid[key_c] @ st.vt[l, d, c][d]
        return np.zeros((len(st.labels[c]), len(st.labels[d])), dtype=np.complex128)

    new_near = {}
    if pl == 0:
        parents_nl = {0: [0]}
    else:
        parents_nl = {p: st.h.lists[pl].neighbor[p] for p in range(t.num_cells(pl))}
    for p, nl in parents_nl.items():
        for q in nl:
            if (q, p) in new_near:
                new_near[p, q] = new_near[q, p].conj().T
                continue
            new_near[p, q] = np.block([[pair_block(c, d) for d in kids[q]] for c in kids[p]])
            if p == q:
                new_near[p, q] = _hermitize(new_near[p, q])
    # far pairs from coarser levels: concatenate child coefficient blocks
    new_vt = {}
    for (j, a, J), part in st.vt.items():
        if j == l:
            continue
        merged = {}
        for p in st._descendants(j, a, pl):
            merged[p] = np.hstack([part[c] for c in kids[p]])
        new_vt[j, a, J] = merged
    st.vt = new_vt
    st.mid = {k: v for k, v in st.mid.items() if k[0] != l}
    st.partners = {k: v for k, v in st.partners.items() if k[0] != l}
    st.near = new_near
    st.labels = new_labels
    st.level = pl


def _active(st):
    return np.sort(np.concatenate([st.labels[c] for c in sorted(st.labels)]))


def invert_hmatrix(h, tol=1e-6, scaled=False, max_rank=None, edges=None):
    """Skeletonization-based inverse of a hierarchical matrix ``h``."""
    if not 0 < tol < 1:
        raise InvalidInputError(f"tol must lie in (0, 1), got {tol}")
    st = _State(h)
    if edges is None:
        edges = h.tree.dim == 2
    N = h.N
    factors, stages = [], []
    history = {("input", h.levels): np.arange(N)}
    while st.level >= 1:
        level_factors = []
        for c in range(h.tree.num_cells(st.level)):
            f = _skeletonize_cell(st, c, tol, scaled, max_rank)
            if f is not None:
                level_factors.append(f)
        if level_factors:
            stages.append(_stage_matrix(N, level_factors))
        factors.extend(level_factors)
        history[("cell", st.level)] = _active(st)
        if edges:
            ef = _edge_phase(st, tol, max_rank)
            if ef:
                stages.append(_stage_matrix(N, ef))
            factors.extend(ef)
            history[("edge", st.level)] = _active(st)
        _merge(st)
    root = st.labels[0]
    A = st.near[0, 0]
    lu = sla.lu_factor(A) if root.size else (np.zeros((0, 0)), np.zeros(0, dtype=np.int32))
    history[("root", 0)] = root.copy()
    stats = {"root_size": int(root.size), "factors": len(factors),
             "scaled_nodes": int(sum(f.Lscale is not None for f in factors))}
    return InverseFactorization(N, factors, stages, root, lu, history, stats)


def invert_hodlr(h, tol=1e-6, scaled=False, max_rank=None):
    """Recursive skeletonization of a 1-D HODLR matrix."""
    if h.tree.dim != 1:
        raise InvalidInputError("invert_hodlr needs a 1-D HODLR matrix")
    return invert_hmatrix(h, tol=tol, scaled=scaled, max_rank=max_rank, edges=False)


def invert_hmatrix2d(h, tol=1e-6, scaled=False, max_rank=None):
    """Cell-then-edge skeletonization of a 2-D H-matrix."""
    if h.tree.dim != 2:
        raise InvalidInputError("invert_hmatrix2d needs a 2-D H-matrix")
    return invert_hmatrix(h, tol=tol, scaled=scaled, max_rank=max_rank, edges=True)
