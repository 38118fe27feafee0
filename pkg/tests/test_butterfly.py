import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fioinv.butterfly import bf_apply, bf_apply_adjoint, bf_build, bf_dense
from fioinv.dense import complex_gaussian, spectral_norm_est
from fioinv.errors import InvalidInputError
from fioinv.problems import FIOProblem, make_ellipse_2d, make_gaussian_1d, make_uniform_1d


def rel_err(problem, bf, seed=0):
    """Estimated ||K - K_dot|| / ||K|| with dense K applies."""
    K = problem.dense()
    n = problem.N
    diff = spectral_norm_est(lambda v: K @ v - bf_apply(bf, v),
                             lambda v: K.conj().T @ v - bf_apply_adjoint(bf, v), n, seed=seed)
    ref = spectral_norm_est(lambda v: K @ v, lambda v: K.conj().T @ v, n, seed=seed)
    return diff / ref


def rvec(n, seed, k=None):
    return complex_gaussian(np.random.default_rng(seed), n if k is None else (n, k))


@pytest.fixture(scope="module")
def bf64():
    p = make_uniform_1d(64)
    return p, bf_build(p)


def test_n64_generous_rank(bf64):
    p, bf = bf64
    assert rel_err(p, bf) < 1e-6


def test_apply_matches_dense(bf64):
    p, bf = bf64
    v = rvec(64, 1)
    Kv = p.dense() @ v
    assert np.linalg.norm(bf_apply(bf, v) - Kv) / np.linalg.norm(Kv) < 1e-5
    assert np.array_equal(bf_apply(bf, np.zeros(64)), np.zeros(64))


def test_adjoint_matches_dense(bf64):
    p, bf = bf64
    v = rvec(64, 2)
    ref = p.dense().conj().T @ v
    assert np.linalg.norm(bf_apply_adjoint(bf, v) - ref) / np.linalg.norm(ref) < 1e-5
    assert np.array_equal(bf_apply_adjoint(bf, np.zeros(64)), np.zeros(64))


def test_linearity(bf64):
    _, bf = bf64
    u, v = rvec(64, 3), rvec(64, 4)
    a, b = 0.3 - 2j, 1.7 + 0.1j
    lhs = bf_apply(bf, a * u + b * v)
    rhs = a * bf_apply(bf, u) + b * bf_apply(bf, v)
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * np.linalg.norm(rhs)


def test_block_apply_matches_columns(bf64):
    _, bf = bf64
    V = rvec(64, 5, 3)
    Y = bf_apply(bf, V)
    for j in range(3):
        assert np.allclose(Y[:, j], bf_apply(bf, V[:, j]))


def test_length_mismatch(bf64):
    _, bf = bf64
    with pytest.raises(InvalidInputError):
        bf_apply(bf, np.ones(63))
    with pytest.raises(InvalidInputError):
        bf_apply_adjoint(bf, np.ones(65))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_exact_adjoint_consistency(seed):
    bf = _cached_bf()
    n = bf.N
    u, v = rvec(n, seed), rvec(n, seed + 1)
    lhs = np.vdot(bf_apply(bf, u), v)
    rhs = np.vdot(u, bf_apply_adjoint(bf, v))
    assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


_CACHE = {}


def _cached_bf():
    if "g" not in _CACHE:
        _CACHE["g"] = bf_build(make_gaussian_1d(256), tol=1e-6)
    return _CACHE["g"]


def test_adjoint_uses_same_blocks():
    bf = _cached_bf()
    D = bf_dense(bf)
    DH = bf_apply_adjoint(bf, np.eye(bf.N, dtype=complex))
    assert np.array_equal(DH, D.conj().T) or np.abs(DH - D.conj().T).max() <= 1e-13 * np.abs(D).max()


def test_zero_amplitude_is_zero_operator():
    base = make_uniform_1d(64)
    zero = FIOProblem(base.grid, base.phase,
                      lambda x, xi: np.zeros(np.broadcast_shapes(x.shape[:-1], xi.shape[:-1]),
                                             dtype=complex), "zero", {})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        bf = bf_build(zero)
    assert np.abs(bf_apply(bf, rvec(64, 0))).max(initial=0.0) == 0.0


@pytest.mark.parametrize("make,n", [(make_uniform_1d, 64), (make_uniform_1d, 256),
                                    (make_uniform_1d, 1024), (make_ellipse_2d, 8),
                                    (make_ellipse_2d, 16)])
def test_forward_accuracy_defaults(make, n):
    p = make(n)
    bf = bf_build(p)
    assert rel_err(p, bf) <= 1e-5


def test_uniform_1024_pipeline_tolerance_order():
    # the pipeline's 1-D butterfly tolerance lands near the reported 3.59e-7
    p = make_uniform_1d(1024)
    ea = rel_err(p, bf_build(p, tol=1e-7))
    assert 3.59e-8 <= ea <= 3.59e-6


@pytest.mark.parametrize("make,n", [(make_uniform_1d, 256), (make_ellipse_2d, 16)])
def test_middle_level_block_count(make, n):
    bf = bf_build(make(n))
    m = bf.levels // 2
    cells = bf.tree.num_cells(m)
    assert bf.stats["middle_blocks"] == cells * cells
    assert len(bf.factors) == bf.levels + 3
    assert bf.middle == bf.levels // 2 + 1
    assert bf.factors[0].shape[1] == bf.factors[-1].shape[0] == bf.N


def test_dense_method_matches_sampled():
    p = make_gaussian_1d(256)
    a = bf_build(p, tol=1e-8, method="dense")
    assert rel_err(p, a) < 1e-6


def test_seed_reproducible():
    p = make_uniform_1d(256)
    a, b = bf_build(p, tol=1e-6, seed=3), bf_build(p, tol=1e-6, seed=3)
    assert all((x != y).nnz == 0 for x, y in zip(a.factors, b.factors))


def test_rank_clamp_warns():
    with pytest.warns(RuntimeWarning, match="clamped"):
        bf_build(make_uniform_1d(64), rank=1000)


def test_invalid_arguments():
    p = make_uniform_1d(64)
    with pytest.raises(InvalidInputError):
        bf_build(p, rank=0)
    with pytest.raises(InvalidInputError):
        bf_build(p, method="svd")


@pytest.mark.xfail(strict=True, reason="tolerance-driven ranks give nnz/N^2 ~ 0.6 at N=1024")
def test_factor_sparsity_n1024():
    bf = bf_build(make_uniform_1d(1024))
    assert bf.nnz / bf.N ** 2 < 0.05


def test_stored_entries_subquadratic():
    # what does hold: nnz / N falls well below N and grows slowly
    per = []
    for n in (256, 1024, 4096):
        bf = bf_build(make_uniform_1d(n), tol=1e-7)
        per.append(bf.nnz / n)
    assert per[2] / per[0] < 4.0          # N grew 16x
    assert per[2] < 4096 / 4
