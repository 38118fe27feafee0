"""End-to-end inverse factorization and the solvers built on it.

``build_inverse`` runs the three stages: butterfly factorization of ``K``,
peeling of ``K_dot^H K_dot`` from products with the butterfly, and
skeletonization-based inversion.  The approximate inverse of ``K`` is the
pseudo-inverse composition ``G K_dot^H``.
"""

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .butterfly import bf_apply, bf_apply_adjoint, bf_build
from .dense import spectral_norm_est
from .errors import FioInvError, InvalidInputError, StageError
from .hif import apply_inverse, invert_hmatrix2d, invert_hodlr
from .peeling import peel_hmatrix2d, peel_hodlr
from .trees import build_tree

__all__ = ["FioInverse", "InverseConfig", "SolveReport", "build_inverse", "estimate_errors",
           "pcg", "solve", "solve_direct"]


@dataclass
class InverseConfig:
    """Tolerances and sizes for :func:`build_inverse`.

    ``eps_bff`` controls the butterfly of ``K``; ``eps_peel`` and ``eps_hif``
    are the working tolerance of the inverse (the ``epsilon`` of a run).
    ``None`` entries take dimension-dependent defaults (see ``resolved``).
    """

    eps_bff: float = None
    eps_peel: float = 1e-6
    eps_hif: float = None
    rank: int = None          # butterfly rank cap
    peel_rank: int = None     # k in the probing width k + c
    peel_oversample: int = None  # c; defaults to 4k in 1-D, k in 2-D
    oversample: int = 10      # butterfly row sampling
    leaf_size: int = None     # hierarchical tree leaves
    bf_leaf_size: int = None  # butterfly tree leaves
    seed: int = 0
    scaled: bool = False

    def resolved(self, dim):
        c = InverseConfig(**self.__dict__)
        if c.eps_bff is None:
            c.eps_bff = 1e-7 if dim == 1 else 1e-4
        if c.eps_peel is None:
            c.eps_peel = 1e-6
        if c.eps_hif is None:
            c.eps_hif = c.eps_peel
        for name in ("eps_bff", "eps_peel", "eps_hif"):
            v = getattr(c, name)
            if not 0 < v < 1:
                raise InvalidInputError(f"{name} must lie in (0, 1), got {v}")
        if c.rank is None:
            c.rank = 64 if dim == 1 else 200
        if c.peel_rank is None:
            # sketch noise from the butterfly error grows with k, so k follows eps
            k = int(round(10.0 / 3.0 * np.log10(1.0 / c.eps_peel)))
            c.peel_rank = max(10, k) if dim == 1 else 40
        if c.peel_oversample is None:
            c.peel_oversample = 4 * c.peel_rank if dim == 1 else c.peel_rank
        if c.leaf_size is None:
            c.leaf_size = 32 if dim == 1 else 64
        if c.bf_leaf_size is None:
            c.bf_leaf_size = 4
        for name in ("rank", "peel_rank", "peel_oversample", "leaf_size", "bf_leaf_size"):
            if getattr(c, name) < 1:
                raise InvalidInputError(f"{name} must be positive")
        if c.oversample < 0:
            raise InvalidInputError("oversample must be non-negative")
        return c


@dataclass(eq=False)
class FioInverse:
    problem: object
    bf: object
    h: object
    g: object
    config: InverseConfig
    timings: dict = field(default_factory=dict)

    @property
    def N(self):
        return self.bf.N

    def apply_K(self, v):
        return bf_apply(self.bf, v)

    def apply_KH(self, v):
        return bf_apply_adjoint(self.bf, v)

    def apply_normal(self, v):
        return bf_apply_adjoint(self.bf, bf_apply(self.bf, v))

    def apply_G(self, v):
        return apply_inverse(self.g, v)

    def apply_G_adjoint(self, v):
        return apply_inverse(self.g, v, adjoint=True)


def _stage(name, fn, timings):
    t0 = time.perf_counter()
    try:
        out = fn()
    except FioInvError as exc:
        raise StageError(name, exc) from exc
    timings[name] = time.perf_counter() - t0
    return out


def _depth(grid, leaf_size):
    # the strongly admissible 2-D format needs at least a 4 x 4 cell level
    return max(1, int(round(np.log2(grid.n / np.sqrt(leaf_size)))))


def build_inverse(problem, config=None, bf=None, **overrides):
    """Build ``G ~ (K^H K)^{-1}`` for ``problem`` and keep the butterfly ``K_dot``.

    A butterfly built earlier for the same problem can be passed as ``bf``
    (its build time is then reported as zero).
    """
    config = config or InverseConfig()
    if overrides:
        config = InverseConfig(**{**config.__dict__, **overrides})
    dim = problem.grid.dim
    cfg = config.resolved(dim)
    with warnings.catch_warnings():
        # default ranks and probe widths are clamped silently on small grids
        warnings.filterwarnings("ignore", message=".*clamped", category=RuntimeWarning)
        return _build(problem, cfg, bf)


def _build(problem, cfg, bf):
    dim = problem.grid.dim
    timings = {}
    if bf is None:
        bf = _stage("butterfly", lambda: bf_build(problem, rank=cfg.rank, tol=cfg.eps_bff,
                                                   seed=cfg.seed, leaf_size=cfg.bf_leaf_size,
                                                   oversample=cfg.oversample), timings)
    else:
        if bf.N != problem.N:
            raise InvalidInputError(f"butterfly has N={bf.N}, problem has N={problem.N}")
        timings["butterfly"] = 0.0

    def oracle(R):
        return bf_apply_adjoint(bf, bf_apply(bf, R))

    if dim == 2:
        tree = build_tree(problem.grid, levels=max(2, _depth(problem.grid, cfg.leaf_size)))
    else:
        tree = build_tree(problem.grid, cfg.leaf_size)
    if dim == 1:
        h = _stage("peel", lambda: peel_hodlr(oracle, problem.N, tree, rank=cfg.peel_rank,
                                              oversample=cfg.peel_oversample, seed=cfg.seed,
                                              tol=cfg.eps_peel), timings)
        g = _stage("hif", lambda: invert_hodlr(h, tol=cfg.eps_hif, scaled=cfg.scaled), timings)
    else:
        h = _stage("peel", lambda: peel_hmatrix2d(oracle, tree, rank=cfg.peel_rank,
                                                  oversample=cfg.peel_oversample, seed=cfg.seed,
                                                  tol=cfg.eps_peel), timings)
        g = _stage("hif", lambda: invert_hmatrix2d(h, tol=cfg.eps_hif, scaled=cfg.scaled), timings)
    timings["total"] = sum(timings.values())
    return FioInverse(problem, bf, h, g, cfg, timings)


def solve_direct(inv, u):
    """Approximate solution of ``K f = u`` as ``G K_dot^H u``."""
    u = np.asarray(u, dtype=np.complex128)
    if u.shape[0] != inv.N:
        raise InvalidInputError(f"vector length {u.shape[0]} does not match N={inv.N}")
    return inv.apply_G(inv.apply_KH(u))


@dataclass
class SolveReport:
    iterations: int
    residual_history: list
    solve_time: float
    converged: bool
    e_a: float = None
    e_s: float = None
    precond: str = None


def pcg(apply_A, b, precond=None, tol=1e-8, max_iter=5000, x0=None, callback=None):
    """Preconditioned conjugate gradients for a hermitian positive definite operator.

    Stops when the relative residual ``||b - A x|| / ||b||`` falls to ``tol``.
    The recurrence residual is used per iteration; on apparent convergence
    the residual is recomputed explicitly and iteration continues from the
    true residual if it has drifted above ``tol``.
    """
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=np.complex128)
    if not tol > 0:
        raise InvalidInputError("tol must be positive")
    M = precond if precond is not None else (lambda r: r)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.complex128)
    bnorm = np.linalg.norm(b)
    history = []
    if bnorm == 0.0:
        return np.zeros_like(b), SolveReport(0, [0.0], time.perf_counter() - t0, True)
    r = b - apply_A(x) if x0 is not None else b.copy()
    rel = np.linalg.norm(r) / bnorm
    history.append(float(rel))
    best_x, best_rel = x.copy(), rel
    if rel <= tol:
        return x, SolveReport(0, history, time.perf_counter() - t0, True)
    z = M(r)
    p = z.copy()
    rz = np.vdot(r, z)
    it = 0
    converged = False
    while it < max_iter:
        Ap = apply_A(p)
        pAp = np.vdot(p, Ap)
        if pAp.real <= 0:
            break
        alpha = rz / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        it += 1
        rel = np.linalg.norm(r) / bnorm
        if rel <= tol:
            r = b - apply_A(x)
            rel = np.linalg.norm(r) / bnorm
        history.append(float(rel))
        if callback is not None:
            callback(x)
        if rel < best_rel:
            best_x, best_rel = x.copy(), rel
        if rel <= tol:
            converged = True
            break
        z = M(r)
        rz_new = np.vdot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    if not converged:
        x = best_x
    return x, SolveReport(it, history, time.perf_counter() - t0, converged)


def solve(inv, u, precond="inverse", tol=1e-8, max_iter=5000):
    """Solve ``K f = u`` through CG on ``K_dot^H K_dot f = K_dot^H u``.

    ``precond="inverse"`` uses ``G``; ``"adjoint"`` is the unpreconditioned
    normal-equation baseline.
    """
    if precond not in ("inverse", "adjoint"):
        raise InvalidInputError(f"precond must be 'inverse' or 'adjoint', got {precond!r}")
    b = inv.apply_KH(np.asarray(u, dtype=np.complex128))
    M = inv.apply_G if precond == "inverse" else None
    x, rep = pcg(inv.apply_normal, b, precond=M, tol=tol, max_iter=max_iter)
    rep.precond = precond
    return x, rep


def estimate_errors(problem, inv, seed=0, rel_prec=1e-2):
    """``(e_a, e_s)``: relative error of ``K_dot`` and ``||I - G K_dot^H K||``.

    Both use dense kernel products, so the cost is ``O(N^2)`` per iteration.
    """
    N = problem.N
    nK = spectral_norm_est(problem.matvec, problem.rmatvec, N, rel_prec=rel_prec, seed=seed)
    diff = spectral_norm_est(lambda v: problem.matvec(v) - inv.apply_K(v),
                             lambda v: problem.rmatvec(v) - inv.apply_KH(v),
                             N, rel_prec=rel_prec, seed=seed + 1)
    e_a = float(diff / nK) if nK > 0 else 0.0

    def E(v):
        return v - inv.apply_G(inv.apply_KH(problem.matvec(v)))

    def EH(v):
        return v - problem.rmatvec(inv.apply_K(inv.apply_G_adjoint(v)))

    e_s = float(spectral_norm_est(E, EH, N, rel_prec=rel_prec, seed=seed + 2))
    return e_a, e_s
