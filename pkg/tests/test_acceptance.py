"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The expensive regret runs are shared through module-scoped fixtures.  The
whole file takes several minutes; select with ``pytest tests/test_acceptance.py``.
"""

import math

import numpy as np
import pytest

from lowrank_experts import adversaries, algorithms, geometry, linalg, simplex_qp, verify
from lowrank_experts.rng import Xoshiro256

SEEDS = range(20)
D, T = 3, 4000


def final_regret(learner, L):
    return float(algorithms.play(learner, L)["cum_regret"][-1])


@pytest.fixture(scope="module")
def lowrank_runs():
    """Low-rank learner on stochastic low-rank streams: regrets and per-run norm checks."""
    out = {}
    for N in (50, 500, 2000):
        regrets, dual, primal = [], [], []
        for seed in SEEDS:
            L = adversaries.gen_stochastic_lowrank(N, D, T, seed).losses
            learner = algorithms.LowRankExperts(N, record=True)
            regrets.append(final_regret(learner, L))
            dn, pn = verify.epoch_norms(learner, n_points=1000, seed=seed)
            dual.append(dn)
            primal.append(pn)
        out[N] = {"regret": np.array(regrets), "dual": np.array(dual), "primal": np.array(primal)}
    return out


def test_criterion_01_lowrank_regret_scale(lowrank_runs, verdict):
    bound = 8 * D * math.sqrt(T)
    means = {N: r["regret"].mean() for N, r in lowrank_runs.items()}
    spread = (max(means.values()) - min(means.values())) / min(means.values())
    ok = all(m <= bound for m in means.values()) and spread < 0.25
    text = ", ".join(f"N={N}: {m:.1f}" for N, m in means.items())
    verdict(1, ok, f"mean regret {text} (bound {bound:.1f}); spread {spread:.1%} (< 25%)")
    assert ok


def test_criterion_03_norm_invariants(lowrank_runs, verdict):
    dual = max(r["dual"].max() for r in lowrank_runs.values())
    primal = max(r["primal"].max() for r in lowrank_runs.values())
    ok = dual <= 1 + 1e-6 and primal <= 1e-6
    verdict(3, ok, f"max dual norm^2 {dual:.6f} (<= 1 + 1e-6); max ||x||_H^2 - 4k {primal:.3g} (<= 1e-6)")
    assert ok


def test_criterion_02_fixed_subspace_omd(verdict):
    N = 200
    regrets = []
    for seed in SEEDS:
        s = adversaries.gen_stochastic_lowrank(N, D, T, seed)
        H, _ = algorithms.subspace_regularizer(s.embedding, eps=1.0)
        learner = algorithms.OMDFixed(H, algorithms.sqrt_schedule(D, 4.0))
        regrets.append(final_regret(learner, s.losses))
    mean, bound = float(np.mean(regrets)), 8 * math.sqrt(D * T)
    ok = mean <= bound
    verdict(2, ok, f"mean regret {mean:.1f} (bound {bound:.1f})")
    assert ok


def test_criterion_04_hypercube_lower_bound(verdict):
    d, horizon, seeds = 4, 2048, range(50)
    target = math.sqrt(d * horizon / 8)
    regrets = {"hedge": [], "lowrank": []}
    for seed in seeds:
        L = adversaries.gen_hypercube(d, horizon, seed).losses
        N = L.shape[0]
        regrets["hedge"].append(final_regret(algorithms.Hedge(N, horizon=horizon), L))
        regrets["lowrank"].append(final_regret(algorithms.LowRankExperts(N), L))
    ok, parts = True, []
    for name, r in regrets.items():
        r = np.array(r)
        se = r.std(ddof=1) / math.sqrt(len(r))
        ok &= r.mean() >= target - 2 * se
        parts.append(f"{name} {r.mean():.1f} (se {se:.1f})")
    verdict(4, ok, f"{', '.join(parts)}; threshold sqrt(dT/8) = {target:.1f} minus 2 se")
    assert ok


def test_criterion_05_adagrad_rank_one_lower_bound(verdict):
    N, horizon = 4096, 10
    assert horizon <= math.sqrt(N) / 6
    streams = {"adagrad_case1": adversaries.gen_adagrad_case1(N, horizon),
               "adagrad_case2": adversaries.gen_adagrad_case2(N, horizon)}
    rank_ok = all(adversaries.numeric_rank(s.losses) == 1 for s in streams.values())
    failures, worst = [], math.inf
    for eta in (0.01, 0.05, 0.1, 0.5, 1.0):
        for delta in (0.1, 1.0, 10.0):
            case = adversaries.adagrad_hard_case(N, horizon, eta, delta)
            if case is None:
                failures.append((eta, delta, "no case"))
                continue
            r = final_regret(algorithms.AdaGrad(N, eta=eta, delta=delta), streams[case].losses)
            worst = min(worst, r)
            if r < horizon / 2 - 1e-9:
                failures.append((eta, delta, r))
    ok = rank_ok and not failures
    verdict(5, ok, f"15 grid points, smallest regret {worst:.3f} (>= T/2 = {horizon / 2}); "
                   f"rank one: {rank_ok}; failures {failures}")
    assert ok


def test_criterion_06_follow_the_leader(verdict):
    N = 1000
    exact, approx = [], []
    for seed in SEEDS:
        exact.append(final_regret(algorithms.FTL(N), adversaries.gen_stochastic_lowrank(N, D, T, seed).losses))
        approx.append(final_regret(algorithms.FTL(N), adversaries.gen_approx_lowrank(N, D, T, 0.1, seed).losses))
    b1 = 8 * math.sqrt(D * T)
    b2 = b1 + 0.1 * math.sqrt(T * math.log(N))
    m1, m2 = float(np.mean(exact)), float(np.mean(approx))
    ok = m1 <= b1 and m2 <= b2
    verdict(6, ok, f"exact rank: {m1:.1f} (bound {b1:.1f}); approximate rank: {m2:.1f} (bound {b2:.1f})")
    assert ok


def test_criterion_07_pinv_sandwich(verdict):
    rng = Xoshiro256(7)
    worst = 0.0
    for trial in range(100):
        d = 1 + trial % 8
        n = d + int(rng.random() * (33 - d))
        M = verify.random_spd(rng, d)
        U = rng.normal((d, n))
        assert np.linalg.matrix_rank(U) == d
        worst = max(worst, verify.pinv_sandwich_residual(M, U))
    ok = worst <= 1e-8
    verdict(7, ok, f"100 trials, max relative Frobenius error {worst:.2e} (<= 1e-8)")
    assert ok


def test_criterion_08_two_block_projection(verdict):
    worst, count = 0.0, 0
    for N in (4, 8, 64):
        for a in (2.0 / N, 0.5, 1.0, 3.0):
            for alpha in (0.01, 0.1, 1.0, 10.0, 100.0):
                for delta in (0.01, 0.1, 1.0, 10.0):
                    y, G, expected = verify.two_block_instance(N, a, alpha, delta)
                    x = simplex_qp.mahalanobis_simplex_projection(G, y)
                    worst = max(worst, float(np.max(np.abs(x - expected))))
                    count += 1
    ok = worst <= 1e-9
    verdict(8, ok, f"{count} instances over N in (4, 8, 64), max coordinate error {worst:.2e} (<= 1e-9)")
    assert ok


def test_criterion_09_slab_containment(verdict):
    rng = Xoshiro256(9)
    outer = inner = polar = -math.inf
    mono = 0.0
    for trial in range(20):
        A = rng.normal((20, 3))
        P = geometry.SlabPolytope(A)
        for eps in (1.0, 0.5):
            E = geometry.enclosing_ellipsoid(P, eps=eps)
            cert = geometry.containment_certificates(P, E, eps, n_samples=1000, seed=trial)
            outer = max(outer, cert["outer"] - 1.0)
            inner = max(inner, cert["inner"] - 1.0)
        res = geometry.khachiyan_weights(A, eps=1e-6)
        mono = max(mono, -float(np.min(np.diff(res.logdet), initial=0.0)))
        M = E.shape
        back = geometry.polar(geometry.polar(E)).shape
        polar = max(polar, float(np.linalg.norm(back - M) / np.linalg.norm(M)))
    ok = outer <= 1e-6 and inner <= 1e-6 and mono <= 1e-6 and polar <= 1e-9
    verdict(9, ok, f"20 polytopes: outer slack {outer:.2e}, inner slack {inner:.2e}, "
                   f"log-det decrease {mono:.1e}, polar round trip {polar:.1e} (all <= tolerance)")
    assert ok


def test_criterion_10_qp_oracle(oracles, verdict):
    arg = kkt = 0.0
    for case in oracles["qp3"]:
        H = np.array(case["H"])
        x_t, loss, y = np.array(case["x_t"]), np.array(case["loss"]), np.array(case["y"])
        eta = case["eta"]
        x = simplex_qp.omd_step(H, eta, x_t, loss)
        p = simplex_qp.mahalanobis_simplex_projection(H, y)
        arg = max(arg, float(np.max(np.abs(x - case["omd_argmin"]))),
                  float(np.max(np.abs(p - case["proj_argmin"]))))
        kkt = max(kkt, simplex_qp.kkt_residual(loss + (2.0 / eta) * H @ (x - x_t), x),
                  simplex_qp.kkt_residual(H @ (p - y), p))
    ok = arg <= 1e-4 and kkt <= 1e-8
    verdict(10, ok, f"50 instances: max argument error {arg:.1e} (<= 1e-4), max KKT residual {kkt:.1e} (<= 1e-8)")
    assert ok
