"""Dense complex linear-algebra kernels used by every factorization stage.

Everything here works on small dense blocks: interpolative decompositions,
orthonormal bases, pseudo-inverses, sketch-based low-rank recovery and a
power-iteration norm estimator.  All randomized routines take an explicit
integer seed.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import InvalidInputError, NotPositiveDefiniteError

__all__ = [
    "IdResult",
    "LowRankFactor",
    "NormEstimate",
    "as_matrix",
    "cholesky",
    "derive_rng",
    "id_decompose",
    "interp_given_skeleton",
    "lowrank_from_sketches",
    "orth_basis",
    "pinv",
    "randomized_lowrank",
    "spectral_norm_est",
]


def derive_rng(seed, *keys):
    """Return a Generator for ``seed`` specialised by integer ``keys``.

    The same (seed, keys) pair always yields the same stream, so every call
    site gets reproducible randomness without sharing generator state.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def complex_gaussian(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def as_matrix(M, name="matrix"):
    """Validate ``M`` as a finite 2-D array and return it as complex128."""
    A = np.asarray(M)
    if A.ndim != 2:
        raise InvalidInputError(f"{name} must be two-dimensional, got shape {A.shape}")
    A = A.astype(np.complex128, copy=False)
    if not np.all(np.isfinite(A)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return A


@dataclass
class IdResult:
    """Column interpolative decomposition ``M[:, redundant] ~ M[:, skeleton] @ interp``."""

    skeleton: np.ndarray
    redundant: np.ndarray
    interp: np.ndarray

    @property
    def rank(self):
        return len(self.skeleton)


def _interp_from_skeleton(M, skel, red):
    if len(skel) == 0:
        return np.zeros((0, len(red)), dtype=np.complex128)
    Q, R = sla.qr(M[:, skel], mode="economic")
    return sla.solve_triangular(R, Q.conj().T @ M[:, red])


def interp_given_skeleton(M, skeleton):
    """Interpolation matrix for a prescribed skeleton column set.

    Returns ``(redundant, T)`` with ``M[:, redundant] ~ M[:, skeleton] @ T``
    in the least-squares sense.
    """
    M = np.asarray(M, dtype=np.complex128)
    skeleton = np.asarray(skeleton, dtype=np.intp)
    mask = np.ones(M.shape[1], dtype=bool)
    mask[skeleton] = False
    red = np.flatnonzero(mask)
    return red, _interp_from_skeleton(M, skeleton, red)


def id_decompose(M, tol=1e-12, max_rank=None, bound=2.0, max_swaps=None):
    """Column interpolative decomposition via pivoted QR.

    The rank is the number of pivots with ``|R_ii| > tol * |R_00|``, capped
    at ``max_rank``.  If any interpolation coefficient exceeds ``bound`` the
    skeleton is refined by strong-RRQR style swaps: exchanging skeleton
    column ``i`` with redundant column ``j`` whenever ``|T_ij| > bound``
    grows ``|det R11|`` by that factor, so the loop terminates.

    Parameters
    ----------
    M : (m, n) array_like
    tol : float
        Relative rank threshold, ``0 < tol < 1``.
    max_rank : int, optional
    bound : float or None
        Interpolation coefficient bound; ``None`` disables the refinement.

    Returns
    -------
    IdResult
    """
    M = as_matrix(M)
    if not 0 < tol < 1:
        raise InvalidInputError(f"tol must lie in (0, 1), got {tol}")
    m, n = M.shape
    if n == 0:
        empty = np.zeros(0, dtype=np.intp)
        return IdResult(empty, empty, np.zeros((0, 0), dtype=np.complex128))
    if m == 0:
        return IdResult(np.zeros(0, dtype=np.intp), np.arange(n),
                        np.zeros((0, n), dtype=np.complex128))
    R, perm = sla.qr(M, mode="r", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag[0] == 0.0:
        k = 0
    else:
        small = np.flatnonzero(diag <= tol * diag[0])
        k = int(small[0]) if small.size else len(diag)
    if max_rank is not None:
        k = min(k, int(max_rank))
    skel = perm[:k].copy()
    red = perm[k:].copy()
    if k == 0:
        return IdResult(skel, red, np.zeros((0, len(red)), dtype=np.complex128))
    T = sla.solve_triangular(R[:k, :k], R[:k, k:])
    if bound is not None and T.size:
        limit = max_swaps if max_swaps is not None else 4 * k + 10
        swaps = 0
        while swaps < limit:
            idx = np.unravel_index(np.argmax(np.abs(T)), T.shape)
            if abs(T[idx]) <= bound:
                break
            i, j = idx
            skel[i], red[j] = red[j], skel[i]
            T = _interp_from_skeleton(M, skel, red)
            swaps += 1
    return IdResult(skel, red, T)


@dataclass
class LowRankFactor:
    """Low-rank block ``left @ mid @ right^H``.

    ``left`` and ``right`` carry orthonormal columns when produced by
    :func:`lowrank_from_sketches`.
    """

    left: np.ndarray
    mid: np.ndarray
    right: np.ndarray

    @property
    def shape(self):
        return (self.left.shape[0], self.right.shape[0])

    @property
    def rank(self):
        return min(self.mid.shape) if self.mid.size else 0

    def dense(self):
        if self.mid.size == 0:
            return np.zeros(self.shape, dtype=np.complex128)
        return self.left @ (self.mid @ self.right.conj().T)

    def matvec(self, v):
        if self.mid.size == 0:
            return np.zeros((self.shape[0],) + np.shape(v)[1:], dtype=np.complex128)
        return self.left @ (self.mid @ (self.right.conj().T @ v))

    def rmatvec(self, v):
        """Apply the adjoint block ``right @ mid^H @ left^H``."""
        if self.mid.size == 0:
            return np.zeros((self.shape[1],) + np.shape(v)[1:], dtype=np.complex128)
        return self.right @ (self.mid.conj().T @ (self.left.conj().T @ v))

    def adjoint(self):
        return LowRankFactor(self.right, self.mid.conj().T, self.left)

    def truncated(self, tol):
        """Recompress through an SVD of ``mid``, dropping values below ``tol * s_max``."""
        if self.mid.size == 0:
            return self
        P, s, Qh = np.linalg.svd(self.mid, full_matrices=False)
        keep = int(np.count_nonzero(s > tol * s[0])) if s[0] > 0 else 0
        return LowRankFactor(self.left @ P[:, :keep], np.diag(s[:keep]).astype(np.complex128),
                             self.right @ Qh[:keep].conj().T)


def orth_basis(M, tol=1e-12):
    """Orthonormal basis of ``range(M)`` by pivoted QR with relative truncation."""
    M = as_matrix(M)
    m, n = M.shape
    if n == 0 or m == 0:
        return np.zeros((m, 0), dtype=np.complex128)
    Q, R, _ = sla.qr(M, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag[0] == 0.0:
        return np.zeros((m, 0), dtype=np.complex128)
    k = int(np.count_nonzero(diag > tol * diag[0]))
    return Q[:, :k]


def pinv(M, tol=1e-12):
    """Moore-Penrose pseudo-inverse discarding singular values below ``tol * s_max``."""
    M = as_matrix(M)
    m, n = M.shape
    if M.size == 0:
        return np.zeros((n, m), dtype=np.complex128)
    U, s, Vh = np.linalg.svd(M, full_matrices=False)
    if s[0] == 0.0:
        return np.zeros((n, m), dtype=np.complex128)
    keep = s > tol * s[0]
    return (Vh[keep].conj().T / s[keep]) @ U[:, keep].conj().T


def _leading_basis(Y, tol, rank):
    if Y.size == 0:
        return np.zeros((Y.shape[0], 0), dtype=np.complex128)
    U, s, _ = np.linalg.svd(Y, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((Y.shape[0], 0), dtype=np.complex128)
    k = int(np.count_nonzero(s > tol * s[0]))
    if rank is not None:
        k = min(k, int(rank))
    return U[:, :k]


def lowrank_from_sketches(Y1, Y2, R1, R2, tol=None, rank=None):
    """Recover ``A ~ U1 (R2^H U1)^+ (R2^H A R1) (U2^H R1)^+ U2^H`` from sketches.

    ``Y1 = A @ R1`` and ``Y2 = A^H @ R2``.  ``U1``/``U2`` are the leading
    left singular vectors of the sketches, at most ``rank`` of them, so the
    pseudo-inverses are taken of tall, well-conditioned matrices when the
    probes are oversampled.  With ``tol`` the core is recompressed by SVD.
    """
    basis_tol = 1e-12 if tol is None else min(1e-12, tol * 1e-3)
    U1 = _leading_basis(np.asarray(Y1, dtype=np.complex128), basis_tol, rank)
    U2 = _leading_basis(np.asarray(Y2, dtype=np.complex128), basis_tol, rank)
    core = pinv(R2.conj().T @ U1) @ (R2.conj().T @ Y1) @ pinv(U2.conj().T @ R1)
    f = LowRankFactor(U1, core, U2)
    if tol is not None:
        f = f.truncated(tol)
    return f


def randomized_lowrank(apply, apply_adj, n_rows, n_cols, rank, oversample=10, seed=0, tol=None):
    """Two-sided randomized low-rank approximation of a matrix-free operator.

    ``apply`` maps an ``(n_cols, p)`` block to ``(n_rows, p)``; ``apply_adj``
    does the reverse with the adjoint.
    """
    p = int(rank) + int(oversample)
    if p > min(n_rows, n_cols) or rank < 0 or oversample < 0:
        raise InvalidInputError(
            f"rank + oversample = {p} exceeds min(n_rows, n_cols) = {min(n_rows, n_cols)}")
    rng = derive_rng(seed, 0)
    R1 = complex_gaussian(rng, (n_cols, p))
    R2 = complex_gaussian(rng, (n_rows, p))
    Y1 = np.asarray(apply(R1))
    Y2 = np.asarray(apply_adj(R2))
    if Y1.shape != (n_rows, p) or Y2.shape != (n_cols, p):
        raise InvalidInputError(
            f"oracle output shapes {Y1.shape}, {Y2.shape} do not match ({n_rows}, {n_cols})")
    return lowrank_from_sketches(Y1, Y2, R1, R2, tol=tol, rank=rank)


class NormEstimate(float):
    """A float carrying convergence metadata from :func:`spectral_norm_est`."""

    converged: bool = True
    iterations: int = 0

    def __new__(cls, value, converged=True, iterations=0):
        obj = super().__new__(cls, value)
        obj.converged = converged
        obj.iterations = iterations
        return obj


def spectral_norm_est(apply, apply_adj, n, rel_prec=1e-2, seed=0, max_iter=200):
    """Estimate ``||A||_2`` by power iteration on ``A^H A``.

    Iteration stops once successive estimates of ``||A||`` differ by less
    than a tenth of ``rel_prec`` (relative).  Hitting ``max_iter`` returns the
    best estimate with ``converged=False`` and a RuntimeWarning.
    """
    if n < 1:
        raise InvalidInputError("dimension must be at least 1")
    rng = derive_rng(seed, 1)
    x = complex_gaussian(rng, n)
    x /= np.linalg.norm(x)
    prev = None
    est = 0.0
    for it in range(1, max_iter + 1):
        y = apply(x)
        est = float(np.linalg.norm(y))
        if est == 0.0:
            return NormEstimate(0.0, True, it)
        if prev is not None and abs(est - prev) <= 0.1 * rel_prec * est:
            return NormEstimate(est, True, it)
        prev = est
        z = apply_adj(y)
        nz = np.linalg.norm(z)
        if nz == 0.0:
            return NormEstimate(est, True, it)
        x = z / nz
    warnings.warn("spectral_norm_est reached the iteration cap", RuntimeWarning, stacklevel=2)
    return NormEstimate(est, False, max_iter)


def cholesky(M, herm_tol=1e-12):
    """Lower Cholesky factor ``L`` with ``L @ L^H = M``.

    Raises NotPositiveDefiniteError carrying the zero-based failing pivot.
    """
    A = as_matrix(M)
    if A.shape[0] != A.shape[1]:
        raise InvalidInputError("cholesky needs a square matrix")
    scale = max(np.abs(A).max(initial=0.0), 1.0)
    if np.abs(A - A.conj().T).max(initial=0.0) > herm_tol * scale:
        raise InvalidInputError("matrix is not hermitian")
    if A.shape[0] == 0:
        return A.copy()
    L, info = sla.lapack.zpotrf(A, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(
            f"non-positive pivot at index {info - 1}", pivot=info - 1)
    if info < 0:
        raise InvalidInputError(f"zpotrf rejected argument {-info}")
    return L
