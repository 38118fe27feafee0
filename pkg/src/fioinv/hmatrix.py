"""Hierarchical approximations of the hermitian matrix ``S = K^H K``.

One representation covers both layouts:

* 1-D HODLR: at level ``l`` every cell interacts in low rank with its
  sibling only, and leaf cells keep a dense diagonal block.
* 2-D H-matrix: at level ``l`` a cell interacts in low rank with its
  interaction list, and leaf cells keep dense blocks with their neighbors.

Low-rank blocks are stored once per unordered pair ``I < J`` as
``S[I, J] ~ left @ mid @ right^H``; the ``(J, I)`` block is the conjugate
transpose.  Near-field blocks are kept for both orders and are exact
conjugate transposes of each other.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .trees import CellLists

__all__ = ["HMatrix", "HMatrix2D", "HodlrMatrix", "hmatrix_apply", "hodlr_apply",
           "hodlr_lists", "to_dense"]


def hodlr_lists(tree, level):
    """Weak-admissibility lists: NL is the cell itself, IL its sibling."""
    n = tree.num_cells(level)
    return CellLists(tuple(np.array([c]) for c in range(n)),
                     tuple(np.array([c ^ 1]) for c in range(n)))


@dataclass(eq=False)
class HMatrix:
    tree: object
    lists: dict                      # level -> CellLists
    lowrank: dict = field(default_factory=dict)   # (level, I, J) with I < J -> LowRankFactor
    near: dict = field(default_factory=dict)      # (I, J) leaf cells -> dense block S[I, J]
    stats: dict = field(default_factory=dict)

    @property
    def N(self):
        return self.tree.N

    @property
    def levels(self):
        return self.tree.levels

    def block(self, level, I, J):
        """Factor with ``S[I, J] ~ left @ mid @ right^H`` for ``J`` in IL(I)."""
        if I < J:
            return self.lowrank[level, I, J]
        return self.lowrank[level, J, I].adjoint()

    def set_block(self, level, I, J, factor):
        if I < J:
            self.lowrank[level, I, J] = factor
        else:
            self.lowrank[level, J, I] = factor.adjoint()

    def set_near(self, I, J, block):
        block = np.asarray(block, dtype=np.complex128)
        if I == J:
            block = 0.5 * (block + block.conj().T)
        self.near[I, J] = block
        self.near[J, I] = block.conj().T

    def max_rank(self):
        return max((f.rank for f in self.lowrank.values()), default=0)

    def apply_levels(self, v, levels):
        """Contribution of the low-rank blocks on the given levels."""
        v = np.asarray(v, dtype=np.complex128)
        y = np.zeros_like(v)
        cells = self.tree.cells
        for (l, I, J), f in self.lowrank.items():
            if l not in levels or f.rank == 0:
                continue
            iI, iJ = cells[l][I], cells[l][J]
            y[iI] += f.matvec(v[iJ])
            y[iJ] += f.rmatvec(v[iI])
        return y

    def apply_near(self, v):
        v = np.asarray(v, dtype=np.complex128)
        y = np.zeros_like(v)
        leaves = self.tree.cells[self.levels]
        for (I, J), B in self.near.items():
            y[leaves[I]] += B @ v[leaves[J]]
        return y

    def apply(self, v):
        v = np.asarray(v, dtype=np.complex128)
        if v.shape[0] != self.N:
            raise InvalidInputError(f"vector length {v.shape[0]} does not match N={self.N}")
        return self.apply_near(v) + self.apply_levels(v, range(1, self.levels + 1))

    def to_dense(self):
        S = np.zeros((self.N, self.N), dtype=np.complex128)
        leaves = self.tree.cells[self.levels]
        for (I, J), B in self.near.items():
            S[np.ix_(leaves[I], leaves[J])] = B
        for (l, I, J), f in self.lowrank.items():
            iI, iJ = self.tree.cells[l][I], self.tree.cells[l][J]
            B = f.dense()
            S[np.ix_(iI, iJ)] = B
            S[np.ix_(iJ, iI)] = B.conj().T
        return S


class HodlrMatrix(HMatrix):
    """1-D weakly admissible layout (sibling low-rank blocks)."""


class HMatrix2D(HMatrix):
    """2-D strongly admissible layout with periodic neighbor lists."""


def hodlr_apply(h, v):
    return h.apply(v)


def hmatrix_apply(h, v):
    return h.apply(v)


def to_dense(h):
    return h.to_dense()

