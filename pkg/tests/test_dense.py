import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fioinv.dense import (cholesky, complex_gaussian, derive_rng, id_decompose, interp_given_skeleton,
                          lowrank_from_sketches, orth_basis, pinv, randomized_lowrank,
                          spectral_norm_est)
from fioinv.errors import InvalidInputError, NotPositiveDefiniteError


def rand(shape, seed=0):
    return complex_gaussian(np.random.default_rng(seed), shape)


def lowrank(m, n, r, seed=0):
    return rand((m, r), seed) @ rand((r, n), seed + 1000)


def id_residual(M, res):
    return np.linalg.norm(M[:, res.redundant] - M[:, res.skeleton] @ res.interp)


def test_derive_rng_is_reproducible():
    a = derive_rng(3, 1, 2).standard_normal(4)
    b = derive_rng(3, 1, 2).standard_normal(4)
    c = derive_rng(3, 2, 1).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


# --- interpolative decomposition

def test_id_duplicate_column():
    c = np.array([1.0, 2.0, 3.0])
    res = id_decompose(np.column_stack([c, c]))
    assert res.rank == 1
    assert len(res.redundant) == 1
    assert np.allclose(res.interp, 1.0)
    assert id_residual(np.column_stack([c, c]), res) < 1e-14


def test_id_rank3_outer_product():
    M = lowrank(10, 10, 3)
    res = id_decompose(M, tol=1e-12)
    assert res.rank == 3
    assert id_residual(M, res) < 1e-10 * np.linalg.norm(M)


def test_id_identity_full_rank():
    res = id_decompose(np.eye(4))
    assert sorted(res.skeleton) == [0, 1, 2, 3]
    assert res.redundant.size == 0


def test_id_partition_and_max_rank():
    M = rand((8, 12))
    res = id_decompose(M, max_rank=5)
    assert res.rank == 5
    assert sorted(np.concatenate([res.skeleton, res.redundant])) == list(range(12))


def test_id_rejects_bad_tol():
    with pytest.raises(InvalidInputError):
        id_decompose(np.eye(3), tol=0.0)


def test_interp_given_skeleton_exact():
    M = lowrank(6, 9, 2, seed=4)
    red, T = interp_given_skeleton(M, [0, 1])
    assert np.allclose(M[:, red], M[:, [0, 1]] @ T)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(0, 10_000), st.sampled_from([1e-4, 1e-8, 1e-12]))
def test_id_residual_and_pivot_bound(r, seed, tol):
    rng = np.random.default_rng(seed)
    m, n = rng.integers(r, 40, endpoint=True), rng.integers(r, 40, endpoint=True)
    # geometric spectrum so truncation actually happens
    X, _ = np.linalg.qr(complex_gaussian(rng, (m, r)))
    Y, _ = np.linalg.qr(complex_gaussian(rng, (n, r)))
    M = (X * np.logspace(0, -14, r)) @ Y.conj().T
    res = id_decompose(M, tol=tol)
    assert id_residual(M, res) <= 10 * tol * np.linalg.norm(M)
    assert np.abs(res.interp).max(initial=0.0) <= 2.0 + 1e-9


# --- low-rank recovery

def test_randomized_lowrank_zero_operator():
    f = randomized_lowrank(lambda R: np.zeros((6, R.shape[1])), lambda R: np.zeros((6, R.shape[1])),
                           6, 6, rank=2, oversample=2)
    assert np.abs(f.dense()).max(initial=0.0) == 0.0


def test_randomized_lowrank_rank2():
    A = np.outer(rand(5, 1), rand(5, 2)) + np.outer(rand(5, 3), rand(5, 4))
    f = randomized_lowrank(lambda R: A @ R, lambda R: A.conj().T @ R, 5, 5, rank=2, oversample=3)
    assert np.linalg.norm(f.dense() - A) < 1e-10 * np.linalg.norm(A)


def test_randomized_lowrank_truncation_tracks_sigma4():
    rng = np.random.default_rng(5)
    X, _ = np.linalg.qr(complex_gaussian(rng, (20, 5)))
    Y, _ = np.linalg.qr(complex_gaussian(rng, (20, 5)))
    A = (X * np.array([1.0, 0.5, 0.25, 1e-2, 1e-3])) @ Y.conj().T
    sigma4 = np.linalg.svd(A, compute_uv=False)[3]
    f = randomized_lowrank(lambda R: A @ R, lambda R: A.conj().T @ R, 20, 20, rank=3, oversample=10)
    err = np.linalg.norm(f.dense() - A, 2)
    assert sigma4 / 10 <= err <= 10 * sigma4


def test_randomized_lowrank_rejects_wide_probe():
    with pytest.raises(InvalidInputError):
        randomized_lowrank(lambda R: R, lambda R: R, 4, 4, rank=3, oversample=3)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 8), st.integers(0, 8), st.integers(0, 10_000))
def test_randomized_lowrank_exact_rank(true_rank, extra, seed):
    A = lowrank(30, 25, true_rank, seed)
    k = true_rank + extra
    f = randomized_lowrank(lambda R: A @ R, lambda R: A.conj().T @ R, 30, 25, rank=k,
                           oversample=min(5, 25 - k), seed=seed)
    assert np.linalg.norm(f.dense() - A) <= 1e-10 * np.linalg.norm(A)


def test_lowrank_from_sketches_matches_block():
    A = lowrank(12, 9, 3, seed=8)
    R1, R2 = rand((9, 6), 1), rand((12, 6), 2)
    f = lowrank_from_sketches(A @ R1, A.conj().T @ R2, R1, R2)
    assert np.allclose(f.dense(), A)
    assert np.allclose(f.adjoint().dense(), A.conj().T)
    v = rand(9, 3)
    assert np.allclose(f.matvec(v), A @ v)
    assert np.allclose(f.rmatvec(rand(12, 4)), A.conj().T @ rand(12, 4))


# --- orthonormal basis

def test_orth_basis_single_column():
    Q = orth_basis(np.array([[2.0], [0.0], [0.0]]))
    assert Q.shape == (3, 1)
    assert np.isclose(abs(Q[0, 0]), 1.0)


def test_orth_basis_random_is_orthonormal():
    Q = orth_basis(rand((6, 3)))
    assert np.abs(Q.conj().T @ Q - np.eye(3)).max() < 1e-12


def test_orth_basis_rank_deficient():
    M = rand((4, 4))
    M[:, 3] = M[:, 2]
    assert orth_basis(M).shape[1] <= 3


# --- pseudo-inverse

def test_pinv_diagonal():
    assert np.allclose(pinv(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]))


def test_pinv_zero():
    assert np.array_equal(pinv(np.zeros((3, 3))), np.zeros((3, 3)))


def test_pinv_full_column_rank():
    M = rand((5, 3))
    assert np.abs(pinv(M) @ M - np.eye(3)).max() < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 12), st.integers(0, 10_000))
def test_pinv_moore_penrose(m, n, r, seed):
    r = min(r, m, n)
    M = lowrank(m, n, r, seed) if r else np.zeros((m, n), dtype=complex)
    P = pinv(M)
    scale = max(np.linalg.norm(M), 1.0)
    pscale = max(np.linalg.norm(P), 1.0)
    assert np.linalg.norm(M @ P @ M - M) <= 1e-9 * scale
    assert np.linalg.norm(P @ M @ P - P) <= 1e-9 * pscale
    assert np.linalg.norm((M @ P).conj().T - M @ P) <= 1e-9 * max(np.linalg.norm(M @ P), 1.0)
    assert np.linalg.norm((P @ M).conj().T - P @ M) <= 1e-9 * max(np.linalg.norm(P @ M), 1.0)


# --- spectral norm

def _est(A, rel=1e-2):
    return spectral_norm_est(lambda v: A @ v, lambda v: A.conj().T @ v, A.shape[1], rel_prec=rel)


def test_norm_est_diag():
    assert abs(_est(np.diag([3.0, 1.0, 1.0])) - 3.0) <= 0.03


def test_norm_est_identity():
    assert abs(_est(np.eye(100)) - 1.0) <= 0.01


def test_norm_est_random_vs_svd():
    A = rand((50, 50), 3)
    s = np.linalg.svd(A, compute_uv=False)[0]
    assert abs(_est(A) - s) <= 0.02 * s


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 40), st.floats(0.05, 0.9), st.integers(0, 10_000))
def test_norm_est_known_spectrum(n, gap, seed):
    rng = np.random.default_rng(seed)
    U, _ = np.linalg.qr(complex_gaussian(rng, (n, n)))
    V, _ = np.linalg.qr(complex_gaussian(rng, (n, n)))
    s = np.concatenate([[2.0], 2.0 * (1 - gap) * rng.random(n - 1)])
    A = (U * s) @ V.conj().T
    rel = 1e-2
    assert abs(_est(A, rel) - 2.0) <= 2 * rel * 2.0


def test_norm_est_cap_flags():
    A = np.diag([1.0, 0.999999])
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        est = spectral_norm_est(lambda v: A @ v, lambda v: A.T @ v, 2, rel_prec=1e-15, max_iter=3)
    assert not est.converged
    assert any("cap" in str(x.message) for x in w)


# --- cholesky

def test_cholesky_identity():
    assert np.allclose(cholesky(np.eye(3)), np.eye(3))


def test_cholesky_diag():
    assert np.allclose(cholesky(np.array([[4.0, 0], [0, 9.0]])), np.diag([2.0, 3.0]))


def test_cholesky_random_hpd():
    B = rand((8, 8), 6)
    M = B.conj().T @ B + np.eye(8)
    L = cholesky(M)
    assert np.allclose(L, np.tril(L))
    assert np.linalg.norm(L @ L.conj().T - M) <= 1e-10 * np.linalg.norm(M)


def test_cholesky_not_positive_definite():
    with pytest.raises(NotPositiveDefiniteError) as e:
        cholesky(np.diag([1.0, -1.0, 2.0]))
    assert e.value.pivot == 1


def test_cholesky_rejects_nonhermitian():
    with pytest.raises(InvalidInputError):
        cholesky(np.array([[1.0, 2.0], [0.0, 1.0]]))


@pytest.mark.parametrize("bad", [np.nan, np.inf])
def test_id_rejects_non_finite(bad):
    A = np.ones((4, 4))
    A[1, 2] = bad
    with pytest.raises(InvalidInputError, match="non-finite"):
        id_decompose(A)


def test_lowrank_factor_bases_orthonormal():
    rng = np.random.default_rng(4)
    A = complex_gaussian(rng, (50, 6)) @ complex_gaussian(rng, (6, 40))
    f = randomized_lowrank(lambda X: A @ X, lambda X: A.conj().T @ X, 50, 40, rank=6, oversample=4)
    for B in (f.left, f.right):
        assert np.allclose(B.conj().T @ B, np.eye(B.shape[1]), atol=1e-12)
    assert np.linalg.norm(f.dense() - A, 2) <= 1e-10 * np.linalg.norm(A, 2)
