"""Fast inverse factorization of discrete Fourier integral operators.

``K`` is compressed by a butterfly factorization, ``K^H K`` is peeled into a
hierarchical matrix from products with that butterfly, and the hierarchical
matrix is inverted by recursive skeletonization.  ``G K_dot^H`` then
approximates ``K^{-1}`` as a direct solver or a CG preconditioner.
"""

from .butterfly import ButterflyFactor, bf_apply, bf_apply_adjoint, bf_build, bf_dense
from .container import load_inverse, save_inverse
from .dense import (IdResult, LowRankFactor, cholesky, id_decompose, lowrank_from_sketches,
                    orth_basis, pinv, randomized_lowrank, spectral_norm_est)
from .errors import FioInvError, InvalidInputError, NotPositiveDefiniteError, StageError
from .hif import InverseFactorization, apply_inverse, invert_hmatrix2d, invert_hodlr
from .hmatrix import HMatrix2D, HodlrMatrix, hmatrix_apply, hodlr_apply
from .peeling import peel_hmatrix2d, peel_hodlr
from .problems import (FIOProblem, Grid, apply_inverse_dft, assemble_block, dft, make_ellipse_2d,
                       make_gaussian_1d, make_problem, make_uniform_1d)
from .solver import (FioInverse, InverseConfig, SolveReport, build_inverse, estimate_errors, pcg,
                     solve, solve_direct)
from .trees import ClusterTree, build_tree, neighbor_and_interaction_lists

__version__ = "0.1.0"
