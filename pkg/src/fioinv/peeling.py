"""Matrix-free peeling of a hierarchical approximation of ``S = K^H K``.

Only products ``S @ R`` are available.  Level by level, random probes are
placed on groups of cells whose neighborhoods do not overlap, the
contribution of coarser levels is subtracted, and each admissible block
``S[J, I]`` is recovered from the two sketches ``S[J, I] R_I`` and
``S[I, J] R_J`` with the two-sided randomized range formula.  The leaf
near field is read off from identity probes on the same kind of grouping.

In 1-D the groups are the even and the odd cells (two probes per level).
In 2-D they are the 64 classes of cell coordinates modulo 8, and modulo 4
for the near field.
"""

import warnings

import numpy as np

from .dense import complex_gaussian, derive_rng, lowrank_from_sketches
from .errors import InvalidInputError
from .hmatrix import HMatrix2D, HodlrMatrix, hodlr_lists
from .trees import neighbor_and_interaction_lists

__all__ = ["CountingOracle", "peel_hmatrix2d", "peel_hodlr"]


class CountingOracle:
    """Wraps ``apply_S`` and counts applied columns.

    Wide probe blocks are pushed through in chunks of ``chunk`` columns to
    bound the oracle's working memory; a call still counts once.
    """

    def __init__(self, apply_S, n, chunk=32):
        self.apply_S = apply_S
        self.n = n
        self.chunk = chunk
        self.columns = 0
        self.calls = 0

    def __call__(self, R):
        R = np.asarray(R, dtype=np.complex128)
        if R.shape[0] != self.n:
            raise InvalidInputError(f"probe has {R.shape[0]} rows, expected {self.n}")
        self.calls += 1
        self.columns += 1 if R.ndim == 1 else R.shape[1]
        if R.ndim == 1 or R.shape[1] <= self.chunk:
            return self._apply(R)
        Y = np.empty_like(R)
        for s in range(0, R.shape[1], self.chunk):
            Y[:, s:s + self.chunk] = self._apply(R[:, s:s + self.chunk])
        return Y

    def _apply(self, R):
        Y = np.asarray(self.apply_S(R), dtype=np.complex128)
        if Y.shape != R.shape:
            raise InvalidInputError(f"oracle returned shape {Y.shape}, expected {R.shape}")
        return Y


def _coloring(tree, level, modulus):
    m = tree.per_axis(level)
    q = min(modulus, m)
    groups = {}
    for c in range(tree.num_cells(level)):
        key = tuple(k % q for k in tree.coords(level, c))
        groups.setdefault(key, []).append(c)
    return [groups[k] for k in sorted(groups)]


def _probe_width(level_block, k, c):
    width = k + c
    if width > level_block:
        warnings.warn(f"probe width {width} exceeds block size {level_block}; clamped",
                      RuntimeWarning, stacklevel=3)
        width = level_block
    return width


def _sketch_rank(width, k, c):
    # a clamped probe spans the whole block, so nothing needs truncating
    return k if width == k + c else width


def _peel_level(oracle, h, level, groups, lists, width, rng, tol, rank):
    cells = h.tree.cells[level]
    N = h.N
    R = np.zeros((N, len(groups) * width), dtype=np.complex128)
    col_of = {}
    for g, group in enumerate(groups):
        sl = slice(g * width, (g + 1) * width)
        for I in group:
            G = complex_gaussian(rng, (cells.shape[1], width))
            if width == cells.shape[1]:
                # square probe: keep it unitary so the full block is read stably
                G = np.linalg.qr(G)[0]
            R[cells[I], sl] = G
            col_of[I] = sl
    Y = oracle(R)
    if level > 1:
        Y -= h.apply_levels(R, range(1, level))
    for I in range(len(cells)):
        for J in lists.interaction[I]:
            if J <= I:
                continue
            # S[J, I] from the probe on I, S[I, J] from the probe on J
            Y1 = Y[cells[J], col_of[I]]
            Y2 = Y[cells[I], col_of[J]]
            f = lowrank_from_sketches(Y1, Y2, R[cells[I], col_of[I]], R[cells[J], col_of[J]], tol=tol,
                                      rank=rank)
            h.set_block(level, J, I, f)


def _peel_near(oracle, h, groups, lists):
    L = h.levels
    leaves = h.tree.cells[L]
    m = leaves.shape[1]
    N = h.N
    R = np.zeros((N, len(groups) * m), dtype=np.complex128)
    col_of = {}
    for g, group in enumerate(groups):
        sl = slice(g * m, (g + 1) * m)
        for I in group:
            R[leaves[I], sl] = np.eye(m)
            col_of[I] = sl
    Y = oracle(R) - h.apply_levels(R, range(1, L + 1))
    for I in range(len(leaves)):
        for J in lists.neighbor[I]:
            if J < I:
                continue
            SJI = Y[leaves[J], col_of[I]]
            SIJ = Y[leaves[I], col_of[J]]
            h.set_near(J, I, 0.5 * (SJI + SIJ.conj().T))


def peel_hodlr(apply_S, n, tree, rank=16, oversample=10, seed=0, tol=None):
    """Peel a HODLR approximation of the hermitian operator ``apply_S``.

    Uses ``2 * L * (rank + oversample)`` probe columns for the off-diagonal
    levels plus ``leaf_size`` identity columns for the diagonal blocks
    (fewer when a level's block is narrower than the probe width).
    """
    if tree.dim != 1:
        raise InvalidInputError("peel_hodlr needs a 1-D tree")
    if n != tree.N:
        raise InvalidInputError(f"dimension {n} does not match tree size {tree.N}")
    oracle = CountingOracle(apply_S, n)
    lists = {l: hodlr_lists(tree, l) for l in range(1, tree.levels + 1)}
    h = HodlrMatrix(tree, lists)
    rng = derive_rng(seed, 2)
    for l in range(1, tree.levels + 1):
        width = _probe_width(tree.cells[l].shape[1], rank, oversample)
        groups = [list(range(0, tree.num_cells(l), 2)), list(range(1, tree.num_cells(l), 2))]
        _peel_level(oracle, h, l, groups, lists[l], width, rng, tol,
                    _sketch_rank(width, rank, oversample))
    _peel_near(oracle, h, [list(range(tree.num_cells(tree.levels)))], lists[tree.levels])
    h.stats.update(oracle_columns=oracle.columns, oracle_calls=oracle.calls)
    return h


def peel_hmatrix2d(apply_S, tree, lists=None, rank=24, oversample=10, seed=0, tol=None):
    """Peel a strongly admissible 2-D H-matrix with periodic neighbor lists."""
    if tree.dim != 2:
        raise InvalidInputError("peel_hmatrix2d needs a 2-D tree")
    if tree.levels < 2:
        raise InvalidInputError("peel_hmatrix2d needs a tree of depth >= 2")
    if lists is None:
        lists = {l: neighbor_and_interaction_lists(tree, l, periodic=True)
                 for l in range(1, tree.levels + 1)}
    oracle = CountingOracle(apply_S, tree.N)
    h = HMatrix2D(tree, lists)
    rng = derive_rng(seed, 3)
    for l in range(1, tree.levels + 1):
        if not any(len(il) for il in lists[l].interaction):
            continue
        width = _probe_width(tree.cells[l].shape[1], rank, oversample)
        _peel_level(oracle, h, l, _coloring(tree, l, 8), lists[l], width, rng, tol,
                    _sketch_rank(width, rank, oversample))
    _peel_near(oracle, h, _coloring(tree, tree.levels, 4), lists[tree.levels])
    h.stats.update(oracle_columns=oracle.columns, oracle_calls=oracle.calls)
    return h
