import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from lowrank_experts import linalg, simplex_qp
from lowrank_experts.adversaries import adagrad_case2_vector
from lowrank_experts.errors import ContractError
from lowrank_experts.linalg import ShiftedLowRank
from lowrank_experts.verify import two_block_instance


def _spd(rng, n):
    A = rng.normal(size=(n, n))
    return A @ A.T + 0.2 * np.eye(n)


def test_euclidean_examples():
    assert_allclose(simplex_qp.euclidean_simplex_projection([0.2, 0.3, 0.5]), [0.2, 0.3, 0.5])
    assert_allclose(simplex_qp.euclidean_simplex_projection([2.0, 0.0, 0.0]), [1.0, 0.0, 0.0])
    assert_allclose(simplex_qp.euclidean_simplex_projection([0.5, 0.5, 0.5]), [1 / 3] * 3)
    with pytest.raises(ContractError):
        simplex_qp.euclidean_simplex_projection([np.nan, 1.0])


@given(st.integers(0, 10_000), st.integers(1, 30))
def test_euclidean_kkt(seed, n):
    y = np.random.default_rng(seed).normal(size=n) * 2
    x = simplex_qp.euclidean_simplex_projection(y)
    assert simplex_qp.kkt_residual(x - y, x) <= 1e-10


def test_omd_step_examples():
    x = np.array([0.5, 0.5])
    assert_allclose(simplex_qp.omd_step(np.eye(2), 1.0, x, np.array([1.0, -1.0])), [0.0, 1.0], atol=1e-15)
    H = _spd(np.random.default_rng(0), 4)
    x4 = np.full(4, 0.25)
    assert_allclose(simplex_qp.omd_step(H, 0.7, x4, np.zeros(4)), x4, atol=1e-15)


def test_omd_step_rejects_degenerate_eta():
    for eta in (0.0, -1.0, np.inf, np.nan):
        with pytest.raises(ContractError):
            simplex_qp.omd_step(np.eye(2), eta, np.array([0.5, 0.5]), np.zeros(2))


def test_grid_oracle_qp3(oracles):
    for case in oracles["qp3"]:
        H = np.array(case["H"])
        x_t, loss, eta, y = (np.array(case[k]) for k in ("x_t", "loss", "eta", "y"))
        x = simplex_qp.omd_step(H, float(eta), x_t, loss)
        assert np.max(np.abs(x - case["omd_argmin"])) <= 1e-4
        grad = loss + (2.0 / eta) * H @ (x - x_t)
        assert simplex_qp.kkt_residual(grad, x) <= 1e-8 * max(1.0, 2.0 / eta)
        p = simplex_qp.mahalanobis_simplex_projection(H, y)
        assert np.max(np.abs(p - case["proj_argmin"])) <= 1e-4
        assert simplex_qp.kkt_residual(H @ (p - y), p) <= 1e-8


@given(st.integers(0, 10_000), st.integers(2, 12))
def test_omd_step_properties(seed, n):
    rng = np.random.default_rng(seed)
    H = _spd(rng, n)
    x_t = rng.dirichlet(np.ones(n))
    loss = rng.uniform(-1, 1, n)
    eta = float(rng.uniform(0.05, 5.0))
    x = simplex_qp.omd_step(H, eta, x_t, loss)
    assert x.min() >= 0.0 and abs(x.sum() - 1.0) <= 1e-9
    assert simplex_qp.omd_objective(H, eta, x_t, loss, x) <= simplex_qp.omd_objective(H, eta, x_t, loss, x_t) + 1e-12
    c = float(rng.uniform(0.1, 10.0))
    assert_allclose(simplex_qp.omd_step(c * H, c * eta, x_t, loss), x, atol=1e-9)
    ref = simplex_qp.euclidean_simplex_projection(x_t - 0.5 * eta * loss)
    assert_allclose(simplex_qp.omd_step(np.eye(n), eta, x_t, loss), ref, atol=1e-9)


@given(st.integers(0, 10_000), st.integers(1, 4))
def test_structured_matches_dense(seed, r):
    rng = np.random.default_rng(seed)
    n = 30
    H = ShiftedLowRank(float(rng.uniform(0.3, 2.0)), rng.normal(size=(n, r)) * 2)
    y = rng.normal(size=n) * 0.3 + 1.0 / n
    xs = simplex_qp.metric_projection(H, y)
    xd = simplex_qp.metric_projection(H.dense(), y)
    assert_allclose(xs, xd, atol=1e-9)
    assert simplex_qp.kkt_residual(H @ (xs - y), xs) <= 1e-8


def test_projection_of_feasible_point_is_identity():
    rng = np.random.default_rng(1)
    G = _spd(rng, 5)
    y = rng.dirichlet(np.ones(5))
    assert_allclose(simplex_qp.mahalanobis_simplex_projection(G, y), y, atol=1e-12)


@pytest.mark.parametrize("N", [4, 8, 64])
def test_two_block_closed_form(N):
    # y = (a, .., a, -b, .., -b) with a - b = 2/N projects to (2/N)(1, .., 1, 0, .., 0)
    # under G = (delta I + alpha e e^T)^{1/2}
    for a in np.linspace(2.0 / N, 3.0, 5):
        for alpha in (0.01, 0.5, 4.0, 50.0):
            for delta in (0.05, 1.0, 20.0):
                y, G, expected = two_block_instance(N, a, alpha, delta)
                x = simplex_qp.mahalanobis_simplex_projection(G, y)
                assert np.max(np.abs(x - expected)) <= 1e-9
                e = adagrad_case2_vector(N)
                gain = np.sqrt(delta + alpha * N) - np.sqrt(delta)
                Gs = ShiftedLowRank(np.sqrt(delta), (e / np.sqrt(N))[:, None] * np.sqrt(gain))
                assert np.max(np.abs(simplex_qp.mahalanobis_simplex_projection(Gs, y) - expected)) <= 1e-9


def test_active_set_fallback_to_projected_gradient(monkeypatch):
    rng = np.random.default_rng(3)
    H = _spd(rng, 6)
    y = rng.normal(size=6)
    ref = simplex_qp.metric_projection(H, y)
    monkeypatch.setattr(simplex_qp, "_active_set", lambda *a, **k: None)
    assert_allclose(simplex_qp.metric_projection(H, y), ref, atol=1e-6)


def test_kkt_residual_detects_non_optimal_point():
    y = np.array([0.9, 0.1, 0.0])
    x = np.array([1 / 3, 1 / 3, 1 / 3])
    assert simplex_qp.kkt_residual(x - y, x) > 0.1
    assert simplex_qp.kkt_residual(np.zeros(3), x) == 0.0
