import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from lowrank_experts import linalg
from lowrank_experts.errors import ContractError, NumericError
from lowrank_experts.verify import pinv_sandwich_residual


def _sym(seed, n):
    A = np.random.default_rng(seed).normal(size=(n, n))
    return A + A.T


def test_sym_eig_identity_and_diagonal():
    w, Q = linalg.sym_eig(np.eye(2))
    assert_allclose(w, [1.0, 1.0])
    assert_allclose(Q.T @ Q, np.eye(2), atol=1e-14)
    w, Q = linalg.sym_eig(np.diag([1.0, 2.0]))
    assert_allclose(w, [2.0, 1.0])
    assert_allclose(np.abs(Q), [[0.0, 1.0], [1.0, 0.0]], atol=1e-14)


@given(st.integers(0, 10_000), st.integers(1, 24))
def test_sym_eig_reconstruction(seed, n):
    S = _sym(seed, n)
    w, Q = linalg.sym_eig(S, method="jacobi")
    assert np.linalg.norm((Q * w) @ Q.T - S) <= 1e-10 * max(np.linalg.norm(S), 1e-300)
    assert np.max(np.abs(Q.T @ Q - np.eye(n))) <= 1e-10
    assert np.all(np.diff(w) <= 0)
    assert abs(w.sum() - np.trace(S)) <= 1e-10 * max(np.linalg.norm(S), 1.0)


def test_jacobi_matches_lapack_eigenvalues():
    S = _sym(3, 40)
    wj, _ = linalg.sym_eig(S, method="jacobi")
    wl, _ = linalg.sym_eig(S, method="lapack")
    assert_allclose(wj, wl, atol=1e-10 * np.linalg.norm(S))


def test_sym_eig_contract_errors():
    with pytest.raises(ContractError):
        linalg.sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ContractError):
        linalg.sym_eig(np.eye(5), cap=4)
    with pytest.raises(NumericError, match="sweeps"):
        linalg.jacobi_eigh(_sym(0, 12), max_sweeps=1)


def test_pinv_examples():
    assert_allclose(linalg.pinv(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]))
    assert_allclose(linalg.pinv(np.eye(3)), np.eye(3), atol=1e-14)


@given(st.integers(0, 10_000), st.integers(2, 8))
def test_pinv_penrose_identities(seed, n):
    rng = np.random.default_rng(seed)
    F = rng.normal(size=(n, max(1, n // 2)))
    S = F @ F.T
    P = linalg.pinv(S)
    s = np.linalg.norm(S)
    assert np.linalg.norm(S @ P @ S - S) <= 1e-9 * s
    assert np.linalg.norm(P @ S @ P - P) <= 1e-9 * np.linalg.norm(P)
    assert np.linalg.norm(S @ P - (S @ P).T) <= 1e-9
    assert np.linalg.norm(linalg.pinv(P) - S) <= 1e-8 * s


def test_sqrt_psd_examples():
    assert_allclose(linalg.sqrt_psd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))
    assert_allclose(linalg.sqrt_psd(np.eye(3)), np.eye(3), atol=1e-14)
    with pytest.raises(NumericError):
        linalg.sqrt_psd(np.diag([1.0, -0.1]))
    # rounding-level negatives are clamped
    R = linalg.sqrt_psd(np.diag([1.0, -1e-14]))
    assert_allclose(R, np.diag([1.0, 0.0]))


@given(st.integers(0, 10_000))
def test_sqrt_psd_reconstruction(seed):
    F = np.random.default_rng(seed).normal(size=(6, 6))
    S = F @ F.T
    R = linalg.sqrt_psd(S)
    assert np.linalg.norm(R @ R - S) <= 1e-10 * np.linalg.norm(S)
    assert np.min(np.linalg.eigvalsh(R)) >= -1e-10


def test_span_residual_examples():
    B = linalg.OrthoBasis(3)
    B.add(np.array([1.0, 0.0, 0.0]))
    nrm, direction = linalg.span_residual(B, np.array([2.0, 0.0, 0.0]))
    assert nrm == 0.0 and direction is None
    empty = linalg.OrthoBasis(3)
    nrm, direction = linalg.span_residual(empty, np.array([0.0, 0.0, 1.0]))
    assert nrm == 1.0
    assert_allclose(direction, [0.0, 0.0, 1.0])
    with pytest.raises(ContractError):
        linalg.span_residual(empty, np.ones(4))


@given(st.integers(0, 10_000))
def test_span_residual_matches_dense_projector(seed):
    rng = np.random.default_rng(seed)
    B = linalg.OrthoBasis(8)
    for _ in range(3):
        B.add(linalg.span_residual(B, rng.normal(size=8))[1])
    v = rng.normal(size=8)
    Q = B.columns
    r = (np.eye(8) - Q @ Q.T) @ v
    nrm, direction = linalg.span_residual(B, v)
    assert abs(nrm - np.linalg.norm(r)) <= 1e-10
    assert_allclose(direction, r / np.linalg.norm(r), atol=1e-10)
    B.add(direction)
    assert linalg.span_residual(B, v)[0] <= 1e-10
    assert np.max(np.abs(B.columns.T @ B.columns - np.eye(4))) <= 1e-10


def test_norm_examples():
    x = np.array([3.0, 4.0])
    assert linalg.mahalanobis(np.eye(2), x) == pytest.approx(5.0)
    assert linalg.dual_norm(np.eye(2), x) == pytest.approx(5.0)
    H = np.diag([4.0, 1.0])
    assert linalg.mahalanobis(H, np.array([1.0, 0.0])) == pytest.approx(2.0)
    assert linalg.dual_norm(H, np.array([1.0, 0.0])) == pytest.approx(0.5)
    with pytest.raises(ContractError):
        linalg.dual_norm(np.diag([1.0, 0.0]), x)


@given(st.integers(0, 10_000))
def test_generalised_cauchy_schwarz(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(5, 5))
    H = A @ A.T + 0.1 * np.eye(5)
    x, y = rng.normal(size=5), rng.normal(size=5)
    assert abs(x @ y) <= linalg.mahalanobis(H, x) * linalg.dual_norm(H, y) * (1 + 1e-12)


@given(st.integers(0, 10_000), st.integers(1, 8))
def test_pinv_sandwich_identity(seed, d):
    # U (U^T M U)^+ U^T = M^{-1} for M > 0 and U of full row rank
    rng = np.random.default_rng(seed)
    n = int(rng.integers(d, 33))
    A = rng.normal(size=(d, d))
    M = A @ A.T + 0.5 * np.eye(d)
    U = rng.normal(size=(d, n))
    assert pinv_sandwich_residual(M, U) <= 1e-8


@given(st.integers(0, 10_000), st.integers(1, 4))
def test_shifted_lowrank_matches_dense(seed, r):
    rng = np.random.default_rng(seed)
    n = 12
    F = rng.normal(size=(n, r))
    H = linalg.ShiftedLowRank(0.7, F)
    D = H.dense()
    x = rng.normal(size=n)
    assert_allclose(H @ x, D @ x, atol=1e-12)
    assert_allclose(H.solve(x), np.linalg.solve(D, x), rtol=1e-10, atol=1e-12)
    assert_allclose(H.diagonal(), np.diag(D), atol=1e-12)
    assert H.quad(x) == pytest.approx(x @ D @ x, rel=1e-12)
    assert linalg.dual_norm(H, x) == pytest.approx(linalg.dual_norm(D, x), rel=1e-10)
