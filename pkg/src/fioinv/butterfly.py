"""Butterfly factorization of a discrete FIO matrix.

The spatial tree ``T_X`` and the frequency tree ``T_Omega`` have the same
even depth ``L``.  Blocks ``K[A, B]`` with ``A`` at level ``l`` of ``T_X``
and ``B`` at level ``L - l`` of ``T_Omega`` are numerically low rank.  At the
middle level ``m = L/2`` every block is compressed as ``U D V`` with
interpolative decompositions:

* ``V`` interpolates the columns of ``K[Xi, Omega_j]`` from a skeleton
  ``Jsk`` found on sampled rows,
* ``U`` interpolates the rows of ``K[Xi, Jsk]`` from a skeleton ``Isk``,
* ``D = K[Isk, Jsk]``.

The bases are then pushed outward one level at a time.  On the frequency
side each new block ``K[A, b]`` (``A`` one level coarser in space, ``b``
one level finer in frequency) gets its column skeleton from an ID of
sampled kernel rows; the transfer block to the parent stage is the old
interpolation matrix restricted to those skeleton columns.  The spatial
side is symmetric.  Rows are sampled one per stratum of the cell, so the
sample covers the cell evenly.  The result is the sparse chain

    K ~ U_L C_{L-1} ... C_m D H_m ... H_{L-1} V_L

stored as CSR matrices.  Middle-level blocks are processed one frequency
cell at a time (then one spatial cell at a time) so peak memory stays at
``O(N r)``.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .dense import derive_rng, id_decompose, interp_given_skeleton
from .errors import InvalidInputError
from .trees import build_tree

__all__ = ["ButterflyFactor", "bf_apply", "bf_apply_adjoint", "bf_build", "bf_dense"]


@dataclass(eq=False)
class ButterflyFactor:
    """Sparse factor chain applied right to left.

    ``factors[0]`` is the frequency-leaf factor ``V_L`` (applied first) and
    ``factors[-1]`` is the spatial-leaf factor ``U_L``.  ``middle`` is the
    position of ``D`` in that list.
    """

    factors: list
    middle: int
    tree: object
    rank: int
    tol: float
    stats: dict = field(default_factory=dict)
    _adjoint: list = field(default=None, repr=False)

    @property
    def N(self):
        return self.factors[0].shape[1]

    @property
    def levels(self):
        return self.tree.levels

    @property
    def nnz(self):
        return int(sum(f.nnz for f in self.factors))

    @property
    def adjoint_factors(self):
        if self._adjoint is None:
            self._adjoint = [f.conj().T.tocsr() for f in reversed(self.factors)]
        return self._adjoint

    @property
    def nbytes(self):
        return int(sum(f.data.nbytes + f.indices.nbytes + f.indptr.nbytes for f in self.factors))


def _check_vec(bf, v):
    v = np.asarray(v, dtype=np.complex128)
    if v.shape[0] != bf.N:
        raise InvalidInputError(f"vector length {v.shape[0]} does not match N={bf.N}")
    return v


def bf_apply(bf, v):
    """``K_dot @ v`` for a vector or a block of column vectors."""
    y = _check_vec(bf, v)
    for f in bf.factors:
        y = f @ y
    return y


def bf_apply_adjoint(bf, v):
    """``K_dot^H @ v`` using the conjugate-transposed stored factors."""
    y = _check_vec(bf, v)
    for f in bf.adjoint_factors:
        y = f @ y
    return y


def bf_dense(bf):
    return bf_apply(bf, np.eye(bf.N, dtype=np.complex128))


class _BlockAssembler:
    """Collects dense blocks at (row, col) offsets into one CSR matrix."""

    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []

    def add(self, r0, c0, block):
        if block.size == 0:
            return
        m, n = block.shape
        rr, cc = np.meshgrid(np.arange(r0, r0 + m), np.arange(c0, c0 + n), indexing="ij")
        self.rows.append(rr.ravel())
        self.cols.append(cc.ravel())
        self.vals.append(block.ravel())

    def add_scattered(self, r0, col_idx, block):
        if block.size == 0:
            return
        m = block.shape[0]
        rr = np.repeat(np.arange(r0, r0 + m), len(col_idx))
        cc = np.tile(np.asarray(col_idx), m)
        self.rows.append(rr)
        self.cols.append(cc)
        self.vals.append(block.ravel())

    def build(self, shape):
        if not self.vals:
            return sp.csr_matrix(shape, dtype=np.complex128)
        M = sp.coo_matrix((np.concatenate(self.vals),
                           (np.concatenate(self.rows), np.concatenate(self.cols))), shape=shape)
        return M.tocsr()


def _interp_rows(res, n):
    """``(k, n)`` matrix ``P`` with ``M ~ M[:, skel] @ P``."""
    P = np.zeros((res.rank, n), dtype=np.complex128)
    P[np.arange(res.rank), res.skeleton] = 1.0
    if res.rank:
        P[:, res.redundant] = res.interp
    return P


def _child_positions(tree, level):
    """Positions of each child slot's indices inside the parent's index list."""
    parent = tree.cells[level - 1][0]
    return [np.searchsorted(parent, tree.cells[level][c]) for c in tree.children(level - 1, 0)]


def _sample(idx, s, rng):
    """All of ``idx`` if ``s`` covers it, else one random entry per equal stratum."""
    if s is None or s >= len(idx):
        return idx
    edges = np.linspace(0, len(idx), s + 1)
    lo = np.floor(edges[:-1]).astype(np.intp)
    hi = np.maximum(np.floor(edges[1:]).astype(np.intp), lo + 1)
    return idx[rng.integers(lo, hi)]


def _offsets(ranks):
    off = np.zeros(len(ranks) + 1, dtype=np.intp)
    np.cumsum(ranks, out=off[1:])
    return off


def bf_build(problem, rank=None, tol=1e-8, seed=0, leaf_size=None, oversample=10,
             method="sample"):
    """Build the butterfly factorization of ``problem``'s kernel matrix.

    Parameters
    ----------
    rank : int
        Cap on every interpolative rank; defaults to 64 in 1-D, 200 in 2-D.
        Ranks below the cap are set by ``tol``.
    tol : float
        Relative tolerance of each interpolative decomposition.
    leaf_size : int
        Target points per leaf; the tree depth is forced even.
    oversample : int
        Extra sampled rows for the middle-level column skeletons.
    method : {"sample", "dense"}
        ``"dense"`` uses every row of a middle block instead of a sample.
    """
    grid = problem.grid
    explicit = rank is not None
    if rank is None:
        rank = 64 if grid.dim == 1 else 200
    if rank < 1:
        raise InvalidInputError(f"rank must be >= 1, got {rank}")
    if method not in ("sample", "dense"):
        raise InvalidInputError(f"unknown method {method!r}")
    if leaf_size is None:
        leaf_size = 4
    tree = build_tree(grid, leaf_size, even=True)
    L = tree.levels
    if L % 2:
        raise InvalidInputError("butterfly needs an even tree depth")
    m = L // 2
    nc = tree.num_cells
    block_size = tree.cells[m].shape[1]
    if rank > block_size:
        if explicit:
            warnings.warn(f"rank {rank} exceeds middle block size {block_size}; clamped",
                          RuntimeWarning, stacklevel=2)
        rank = block_size
    nsample = None if method == "dense" else rank + oversample
    pos = [None] + [_child_positions(tree, l) for l in range(1, L + 1)]

    # pair (A at spatial level l, B at frequency level L-l) -> flat id A*nc(L-l)+B
    col_ranks = {}   # frequency-side stage k -> rank per pair
    h_blocks = {}    # stage k -> list of (pair_out, pair_in, block)
    v_leaf = {}      # frequency leaf b -> interpolation (rank, |b|) at spatial root
    isk, jsk, dmid = {}, {}, {}

    for j in range(nc(m)):
        rng = derive_rng(seed, 1, j)
        omega = tree.cells[m][j]
        V = {}
        for i in range(nc(m)):
            xi = tree.cells[m][i]
            rows = _sample(xi, nsample, rng)
            res = id_decompose(problem.block(rows, omega), tol=tol, max_rank=rank)
            jsk[i, j] = omega[res.skeleton]
            V[i] = _interp_rows(res, len(omega))
            sub = problem.block(xi, jsk[i, j])
            rres = id_decompose(sub.T, tol=tol, max_rank=rank)
            isk[i, j] = xi[rres.skeleton]
            dmid[i, j] = problem.block(isk[i, j], jsk[i, j])
        # push the column interpolations out to the frequency leaves; the new
        # skeleton of each (A, b) is chosen on kernel entries, and the transfer
        # blocks are the old coefficients at those columns
        cur = {(i, j): V[i] for i in range(nc(m))}
        for k in range(m + 1, L + 1):
            nxt = {}
            xl = L - k
            for A in range(nc(xl)):
                xa = tree.cells[xl][A]
                for B in {b for (_, b) in cur}:
                    for slot, bc in enumerate(tree.children(k - 1, B)):
                        p = pos[k][slot]
                        rows = _sample(xa, nsample, rng)
                        res = id_decompose(problem.block(rows, tree.cells[k][bc]), tol=tol,
                                           max_rank=rank)
                        col_ranks[k, A * nc(k) + bc] = res.rank
                        for a in tree.children(xl, A):
                            h_blocks.setdefault(k, []).append(
                                (a * nc(k - 1) + B, A * nc(k) + bc, cur[a, B][:, p[res.skeleton]]))
                        nxt[A, bc] = _interp_rows(res, len(p))
            cur = nxt
        for (A, b), P in cur.items():
            v_leaf[b] = P
        for i in range(nc(m)):
            col_ranks[m, i * nc(m) + j] = V[i].shape[0]

    # spatial side, one middle spatial cell at a time
    row_ranks = {}
    c_blocks = {}
    u_leaf = {}
    for i in range(nc(m)):
        xi = tree.cells[m][i]
        cur = {}
        for j in range(nc(m)):
            sub = problem.block(xi, jsk[i, j])
            skel = np.searchsorted(xi, isk[i, j])
            red, T = interp_given_skeleton(sub.T, skel)
            U = np.zeros((len(xi), len(skel)), dtype=np.complex128)
            U[skel, np.arange(len(skel))] = 1.0
            U[red] = T.T
            cur[i, j] = U
            row_ranks[m, i * nc(m) + j] = len(skel)
        rng = derive_rng(seed, 2, i)
        for l in range(m + 1, L + 1):
            nxt = {}
            fl = L - l
            for A in {a for (a, _) in cur}:
                for slot, a in enumerate(tree.children(l - 1, A)):
                    p = pos[l][slot]
                    for B in range(nc(fl)):
                        cols = _sample(tree.cells[fl][B], nsample, rng)
                        res = id_decompose(problem.block(tree.cells[l][a], cols).T, tol=tol,
                                           max_rank=rank)
                        row_ranks[l, a * nc(fl) + B] = res.rank
                        for b in tree.children(fl, B):
                            c_blocks.setdefault(l, []).append(
                                (a * nc(fl) + B, A * nc(fl + 1) + b, cur[A, b][p[res.skeleton]]))
                        nxt[a, B] = _interp_rows(res, len(p)).T
            cur = nxt
        for (a, B), W in cur.items():
            u_leaf[a] = W

    N = problem.N
    npairs = nc(m) ** 2
    factors = []

    # V_L: frequency leaves at the spatial root
    off = _offsets([col_ranks[L, b] for b in range(nc(L))])
    asm = _BlockAssembler()
    for b in range(nc(L)):
        asm.add_scattered(off[b], tree.cells[L][b], v_leaf[b])
    factors.append(asm.build((off[-1], N)))
    # H factors: stage k+1 -> stage k
    for k in range(L, m, -1):
        off_in = _offsets([col_ranks[k, p] for p in range(npairs)])
        off_out = _offsets([col_ranks[k - 1, p] for p in range(npairs)])
        asm = _BlockAssembler()
        for po, pi, blk in h_blocks[k]:
            asm.add(off_out[po], off_in[pi], blk)
        factors.append(asm.build((off_out[-1], off_in[-1])))
    # D
    off_in = _offsets([col_ranks[m, p] for p in range(npairs)])
    off_out = _offsets([row_ranks[m, p] for p in range(npairs)])
    asm = _BlockAssembler()
    for i in range(nc(m)):
        for j in range(nc(m)):
            p = i * nc(m) + j
            asm.add(off_out[p], off_in[p], dmid[i, j])
    middle = len(factors)
    factors.append(asm.build((off_out[-1], off_in[-1])))
    # C factors: spatial stage l-1 -> l
    for l in range(m + 1, L + 1):
        off_in = _offsets([row_ranks[l - 1, p] for p in range(npairs)])
        off_out = _offsets([row_ranks[l, p] for p in range(npairs)])
        asm = _BlockAssembler()
        for po, pi, blk in c_blocks[l]:
            asm.add(off_out[po], off_in[pi], blk)
        factors.append(asm.build((off_out[-1], off_in[-1])))
    # U_L: spatial leaves at the frequency root
    off = _offsets([row_ranks[L, a] for a in range(nc(L))])
    rows_all, cols_all, vals_all = [], [], []
    for a in range(nc(L)):
        W = u_leaf[a]
        idx = tree.cells[L][a]
        rows_all.append(np.repeat(idx, W.shape[1]))
        cols_all.append(np.tile(np.arange(off[a], off[a + 1]), len(idx)))
        vals_all.append(W.ravel())
    factors.append(sp.coo_matrix((np.concatenate(vals_all),
                                  (np.concatenate(rows_all), np.concatenate(cols_all))),
                                 shape=(N, off[-1])).tocsr())

    ranks = [r for r in list(col_ranks.values()) + list(row_ranks.values())]
    stats = {"max_rank": int(max(ranks) if ranks else 0), "middle_blocks": len(dmid),
             "levels": L, "leaf_size": int(tree.cells[L].shape[1])}
    return ButterflyFactor(factors, middle, tree, rank, tol, stats)
