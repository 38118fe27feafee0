"""Uniform dyadic / quad cluster trees and periodic neighbor lists.

The same tree shape serves both the spatial grid and the frequency grid,
since both are indexed by integer grid positions ``0..n-1`` per axis.  At
level ``l`` there are ``2^l`` cells per axis; a cell with per-axis
coordinates ``(c1, c2)`` has flat id ``c1 * 2^l + c2``.
"""

from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "Cell",
    "CellLists",
    "ClusterTree",
    "admissible",
    "build_tree",
    "neighbor_and_interaction_lists",
]


@dataclass(frozen=True)
class Cell:
    level: int
    index: int
    coords: tuple
    lo: np.ndarray
    width: float

    @property
    def dim(self):
        return len(self.coords)

    @property
    def diameter(self):
        return self.width * np.sqrt(self.dim)


@dataclass(frozen=True, eq=False)
class ClusterTree:
    """Uniform tree of depth ``levels`` over an ``n^dim`` grid.

    ``cells[l]`` is an integer array of shape ``(2^(dim*l), N / 2^(dim*l))``
    whose row ``c`` lists the flat grid indices (ascending) of cell ``c``.
    """

    dim: int
    n: int
    levels: int
    cells: tuple

    @property
    def N(self):
        return self.n ** self.dim

    def per_axis(self, level):
        return 2 ** level

    def num_cells(self, level):
        return 2 ** (self.dim * level)

    def indices(self, level, c):
        return self.cells[level][c]

    def coords(self, level, c):
        if self.dim == 1:
            return (int(c),)
        m = self.per_axis(level)
        return (int(c) // m, int(c) % m)

    def flat(self, level, coords):
        m = self.per_axis(level)
        coords = [int(k) % m for k in coords]
        if self.dim == 1:
            return coords[0]
        return coords[0] * m + coords[1]

    def children(self, level, c):
        cc = self.coords(level, c)
        return [self.flat(level + 1, [2 * k + o for k, o in zip(cc, off)])
                for off in product((0, 1), repeat=self.dim)]

    def parent(self, level, c):
        return self.flat(level - 1, [k // 2 for k in self.coords(level, c)])

    def cell(self, level, c):
        w = 1.0 / self.per_axis(level)
        cc = self.coords(level, c)
        return Cell(level, int(c), cc, np.array(cc, dtype=float) * w, w)

    def leaf_of(self):
        """Leaf cell id for each flat grid index."""
        out = np.empty(self.N, dtype=np.intp)
        for c, idx in enumerate(self.cells[self.levels]):
            out[idx] = c
        return out


def _cell_table(dim, n, level):
    m = 2 ** level
    s = n // m
    pos = np.arange(n)
    if dim == 1:
        return pos.reshape(m, s)
    flat = (pos[:, None] * n + pos[None, :]).reshape(m, s, m, s)
    return flat.transpose(0, 2, 1, 3).reshape(m * m, s * s)


def build_tree(grid, leaf_size=None, even=False, levels=None):
    """Build a uniform tree whose leaves hold about ``leaf_size`` points.

    ``even=True`` forces an even depth by adding one level when needed.
    ``levels`` overrides the depth selection.
    """
    dim, n = grid.dim, grid.n
    if leaf_size is None:
        leaf_size = 32 if dim == 1 else 64
    if leaf_size < 1:
        raise InvalidInputError("leaf_size must be positive")
    if levels is None:
        if grid.N < 2 * leaf_size and not even:
            raise InvalidInputError(f"grid of {grid.N} points is too small for leaf_size {leaf_size}")
        per_leaf_axis = leaf_size ** (1.0 / dim)
        levels = max(1, int(round(np.log2(n / per_leaf_axis))))
        if even and levels % 2:
            levels += 1
    max_levels = int(np.log2(n))
    if 2 ** max_levels != n:
        raise InvalidInputError(f"tree construction needs n a power of two, got {n}")
    if not 1 <= levels <= max_levels:
        raise InvalidInputError(f"depth {levels} impossible for n={n}")
    cells = tuple(_cell_table(dim, n, l) for l in range(levels + 1))
    return ClusterTree(dim, n, levels, cells)


def _torus_gap(a_lo, a_w, b_lo, b_w, periodic=True):
    best = np.inf
    for shift in ((-1.0, 0.0, 1.0) if periodic else (0.0,)):
        b = b_lo + shift
        best = min(best, max(0.0, b - (a_lo + a_w), a_lo - (b + b_w)))
    return best


def admissible(cell_a, cell_b, alpha=1.0, periodic=True):
    """Strong admissibility ``min(diam) <= alpha * dist``.

    Distances are measured on the unit torus unless ``periodic`` is false.
    """
    gaps = [_torus_gap(a, cell_a.width, b, cell_b.width, periodic)
            for a, b in zip(cell_a.lo, cell_b.lo)]
    dist = float(np.sqrt(np.sum(np.square(gaps))))
    if dist == 0.0:
        return False
    return min(cell_a.diameter, cell_b.diameter) <= alpha * dist


@dataclass(frozen=True)
class CellLists:
    neighbor: tuple
    interaction: tuple


def _neighbors(tree, level, c, periodic):
    m = tree.per_axis(level)
    cc = tree.coords(level, c)
    out = set()
    for off in product((-1, 0, 1), repeat=tree.dim):
        k = [a + o for a, o in zip(cc, off)]
        if not periodic and any(v < 0 or v >= m for v in k):
            continue
        out.add(tree.flat(level, k))
    return out


def neighbor_and_interaction_lists(tree, level, periodic=True):
    """Neighbor list NL and interaction list IL for every cell at ``level``."""
    if not 1 <= level <= tree.levels:
        raise InvalidInputError(f"level must be in [1, {tree.levels}], got {level}")
    nl = [_neighbors(tree, level, c, periodic) for c in range(tree.num_cells(level))]
    if level == 1:
        parent_nl = [{0}]
    else:
        parent_nl = [_neighbors(tree, level - 1, p, periodic)
                     for p in range(tree.num_cells(level - 1))]
    il = []
    for c in range(tree.num_cells(level)):
        cand = set()
        for p in parent_nl[tree.parent(level, c)]:
            cand.update(tree.children(level - 1, p))
        il.append(cand - nl[c])
    return CellLists(tuple(np.array(sorted(s), dtype=np.intp) for s in nl),
                     tuple(np.array(sorted(s), dtype=np.intp) for s in il))
