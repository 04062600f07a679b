"""Invariant suite.

Each check measures one quantity on fixed seeds and compares it against a
limit.  ``slack = limit - measured`` is reported so that near misses are
visible even when everything passes.
"""

import math
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import adversaries, algorithms, geometry, linalg, simplex_qp
from .rng import Xoshiro256


@dataclass
class Check:
    name: str
    measured: float
    limit: float
    detail: str = ""

    @property
    def passed(self):
        return bool(np.isfinite(self.measured) and self.measured <= self.limit)

    @property
    def slack(self):
        return self.limit - self.measured

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        text = f"{tag}  {self.name:<40s} measured={self.measured:.3e}  limit={self.limit:.3e}  slack={self.slack:+.3e}"
        return text + (f"  ({self.detail})" if self.detail else "")


def simplex_samples(rng, n_points, N):
    """Uniform points on the simplex via normalised exponentials."""
    e = -np.log(rng.random_open((n_points, N)))
    return e / e.sum(axis=1, keepdims=True)


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def random_spd(rng, n, cond=100.0):
    Q, _ = np.linalg.qr(rng.normal((n, n)))
    w = np.exp(np.linspace(0.0, math.log(cond), n))
    return linalg.symmetrize((Q * w) @ Q.T)


def pinv_sandwich_residual(M, U):
    """Relative Frobenius error of ``U (U^T M U)^+ U^T`` against ``M^{-1}``."""
    inner = linalg.pinv(linalg.symmetrize(U.T @ M @ U))
    lhs = U @ inner @ U.T
    Minv = np.linalg.inv(M)
    return _rel(lhs, Minv)


def epoch_norms(learner, n_points=1000, seed=0):
    """Per-epoch norm bounds of a recorded :class:`LowRankExperts` run.

    Returns ``(max dual_sq, max over epochs of (max ||x||_H^2 - 4k))``, where
    the primal maximum is taken over ``n_points`` random simplex points and
    the vertices (the exact maximum of a convex quadratic over the simplex).
    """
    dual = max(learner.dual_norms_sq) if learner.dual_norms_sq else 0.0
    rng = Xoshiro256(seed)
    worst = -np.inf
    # with no recorded epoch the learner still plays against H = I, k = 0
    epochs = learner.epochs or [{"H": learner.H, "k": learner.k}]
    for ep in epochs:
        H = ep["H"]
        X = simplex_samples(rng, n_points, learner.n)
        vals = H.shift * np.sum(X * X, axis=1) + np.sum((X @ H.factor) ** 2, axis=1)
        top = max(float(vals.max()), float(H.diagonal().max()))
        worst = max(worst, top - 4.0 * ep["k"])
    return dual, worst


# ---------------------------------------------------------------- linalg


def check_linalg():
    rng = Xoshiro256(101)
    recon = ortho = order = trace = 0.0
    for n in (2, 3, 5, 8, 13, 21, 34):
        A = rng.normal((n, n))
        S = linalg.symmetrize(A + A.T)
        w, Q = linalg.sym_eig(S)
        recon = max(recon, _rel((Q * w) @ Q.T, S))
        ortho = max(ortho, float(np.max(np.abs(Q.T @ Q - np.eye(n)))))
        order = max(order, float(np.max(np.diff(w), initial=0.0)))
        trace = max(trace, abs(w.sum() - np.trace(S)) / max(np.linalg.norm(S), 1e-300))
    out = [
        Check("linalg.sym_eig_reconstruction", recon, 1e-10),
        Check("linalg.sym_eig_orthonormal", ortho, 1e-10),
        Check("linalg.sym_eig_ordering", order, 0.0, "max increase between consecutive eigenvalues"),
        Check("linalg.sym_eig_trace", trace, 1e-10),
    ]

    penrose = idem = 0.0
    for n, r in ((4, 2), (6, 3), (10, 4)):
        F = rng.normal((n, r))
        S = F @ F.T
        P = linalg.pinv(S)
        SP, PS = S @ P, P @ S
        penrose = max(penrose, _rel(S @ P @ S, S), _rel(P @ S @ P, P),
                      _rel(SP, SP.T), _rel(PS, PS.T))
        idem = max(idem, _rel(linalg.pinv(P), S))
    out.append(Check("linalg.pinv_penrose", penrose, 1e-9))
    out.append(Check("linalg.pinv_idempotence", idem, 1e-8))

    sq = 0.0
    for n in (2, 6, 12):
        F = rng.normal((n, n))
        S = F @ F.T
        R = linalg.sqrt_psd(S)
        sq = max(sq, _rel(R @ R, S))
    out.append(Check("linalg.sqrt_psd", sq, 1e-10))

    span = orth = 0.0
    basis = linalg.OrthoBasis(8)
    for _ in range(5):
        v = rng.normal(8)
        _, direction = linalg.span_residual(basis, v)
        basis.add(direction)
        span = max(span, linalg.span_residual(basis, v)[0])
        C = basis.columns
        orth = max(orth, float(np.max(np.abs(C.T @ C - np.eye(basis.k)))))
    out.append(Check("linalg.span_residual_monotone", span, 1e-10))
    out.append(Check("linalg.orthobasis_orthonormal", orth, 1e-10))

    worst = 0.0
    for trial in range(30):
        d = 1 + trial % 8
        n = d + int(rng.random() * (32 - d))
        M = random_spd(rng, d)
        U = rng.normal((d, n))
        worst = max(worst, pinv_sandwich_residual(M, U))
    out.append(Check("linalg.pinv_sandwich_residual", worst, 1e-8, "random M > 0, full-row-rank U"))
    return out


# ---------------------------------------------------------------- geometry


def check_geometry():
    rng = Xoshiro256(202)
    outer = inner = -np.inf
    mono = polar = 0.0
    for trial in range(5):
        A = rng.normal((20, 3))
        for eps in (0.5, 1.0):
            E = geometry.enclosing_ellipsoid(geometry.SlabPolytope(A), eps=eps)
            cert = geometry.containment_certificates(A, E, eps, n_samples=1000, seed=trial)
            outer = max(outer, cert["outer"] - 1.0)
            inner = max(inner, cert["inner"] - 1.0)
        res = geometry.khachiyan_weights(A, eps=1e-6)
        mono = max(mono, -float(np.min(np.diff(res.logdet), initial=0.0)))
        M = random_spd(rng, 4)
        E2 = geometry.polar(geometry.polar(geometry.Ellipsoid(M)))
        polar = max(polar, _rel(E2.shape, M))
    return [
        Check("geometry.outer_containment", outer, 1e-6, "max x^T M^-1 x - 1 over samples of P_A"),
        Check("geometry.inner_containment", inner, 1e-6, "max ||A y||_inf - 1 on shrunk boundary"),
        Check("geometry.khachiyan_logdet_monotone", mono, 1e-12, "largest log-det decrease"),
        Check("geometry.polar_involution", polar, 1e-9),
    ]


# ---------------------------------------------------------------- simplex_qp


def _decision_violation(x):
    return max(abs(float(x.sum()) - 1.0), max(-float(x.min()), 0.0))


def two_block_instance(N, a, alpha, delta):
    """``(y, G, expected)`` for the closed-form projection with ``a - b = 2/N``."""
    b = a - 2.0 / N
    e = adversaries.adagrad_case2_vector(N)
    y = np.where(e > 0, a, -b)
    G = linalg.sqrt_psd(delta * np.eye(N) + alpha * np.outer(e, e)) if N <= 64 else None
    expected = np.where(e > 0, 2.0 / N, 0.0)
    return y, G, expected


def check_simplex_qp():
    rng = Xoshiro256(303)
    dv = kkt = ident = scale = 0.0
    for trial in range(20):
        N = 3 + trial % 10
        H = random_spd(rng, N, cond=50.0)
        x = simplex_samples(rng, 1, N)[0]
        loss = 2.0 * rng.random(N) - 1.0
        eta = 0.1 + 2.0 * rng.random()
        out = simplex_qp.omd_step(H, eta, x, loss)
        dv = max(dv, _decision_violation(out))
        grad = loss + (2.0 / eta) * H @ (out - x)
        kkt = max(kkt, simplex_qp.kkt_residual(grad, out) / max(1.0, 2.0 / eta))
        y = rng.normal(N)
        p = simplex_qp.mahalanobis_simplex_projection(H, y)
        dv = max(dv, _decision_violation(p))
        kkt = max(kkt, simplex_qp.kkt_residual(H @ (p - y), p))
        ref = simplex_qp.euclidean_simplex_projection(x - 0.5 * eta * loss)
        ident = max(ident, float(np.max(np.abs(simplex_qp.omd_step(np.eye(N), eta, x, loss) - ref))))
        c = 0.2 + 5.0 * rng.random()
        scale = max(scale, float(np.max(np.abs(simplex_qp.omd_step(c * H, c * eta, x, loss) - out))))
    two_block = 0.0
    for N in (4, 8, 64):
        for a in (2.0 / N, 0.5, 3.0):
            for alpha in (0.1, 1.0, 10.0):
                for delta in (0.1, 1.0, 10.0):
                    y, G, expected = two_block_instance(N, a, alpha, delta)
                    x = simplex_qp.mahalanobis_simplex_projection(G, y)
                    two_block = max(two_block, float(np.max(np.abs(x - expected))))
    return [
        Check("simplex_qp.decision_vector", dv, 1e-9, "max |sum - 1| or negativity"),
        Check("simplex_qp.kkt_residual", kkt, 1e-8),
        Check("simplex_qp.identity_reduction", ident, 1e-9),
        Check("simplex_qp.scaling_invariance", scale, 1e-9),
        Check("simplex_qp.two_block_projection", two_block, 1e-9),
    ]


# ---------------------------------------------------------------- algorithms


def check_algorithms(span_tol=algorithms.SPAN_TOL):
    out = []
    stream = adversaries.gen_stochastic_lowrank(40, 3, 300, seed=7)
    L = stream.losses
    N = stream.N

    learners = [
        algorithms.Hedge(N, horizon=stream.T),
        algorithms.FTL(N),
        algorithms.OMDFixed(algorithms.subspace_regularizer(stream.embedding)[0], algorithms.sqrt_schedule(3)),
        algorithms.AdaGrad(N, eta=0.5, delta=1.0),
        algorithms.MetaCombiner(algorithms.LowRankExperts(N), algorithms.Hedge(N, horizon=stream.T),
                                horizon=stream.T),
    ]
    dv = 0.0
    for lr in learners:
        res = algorithms.play(lr, L, keep_decisions=True)
        dv = max(dv, max(_decision_violation(x) for x in res["decisions"]))
    out.append(Check("algorithms.decision_vectors", dv, 1e-9))

    low = algorithms.LowRankExperts(N, span_tol=span_tol, record=True)
    algorithms.play(low, L)
    dual, primal = epoch_norms(low, n_points=1000, seed=1)
    out.append(Check("algorithms.epoch_dual_norm", dual, 1.0 + 1e-6, "max (||l_t||*_H)^2 within epochs"))
    out.append(Check("algorithms.epoch_primal_norm", primal, 1e-6, "max ||x||_H^2 - 4k over the simplex"))
    rank = adversaries.numeric_rank(L)
    out.append(Check("algorithms.rank_matches_k", float(abs(low.k - rank)), 0.0,
                     f"k = {low.k}, numeric rank = {rank}"))
    if low.k:
        Hd = low.H.dense()
        w, _ = linalg.sym_eig(Hd - np.eye(N))
        out.append(Check("algorithms.H_dominates_identity", max(-float(w[-1]), 0.0), 1e-9))
        B = np.column_stack(low.basis)
        out.append(Check("algorithms.pinv_sandwich_in_run", pinv_sandwich_residual(low.M, B.T), 1e-8,
                         "B^T (B M B^T)^+ B against M^-1 on the final epoch"))
    else:
        out.append(Check("algorithms.H_dominates_identity", 0.0, 1e-9, "no epoch recorded"))

    rng = Xoshiro256(404)
    ada = algorithms.AdaGrad(N, eta=0.5, delta=0.5)
    probes = rng.normal((20, N))
    prev = np.array([ada.S.quad(p) for p in probes])
    mono = sq = 0.0
    for t in range(40):
        ada.update(L[:, t])
        cur = np.array([ada.S.quad(p) for p in probes])
        mono = max(mono, float(np.max(prev - cur)))
        prev = cur
        if t % 10 == 9:
            S = ada.S.dense()
            G = ada.G.dense()
            sq = max(sq, _rel(G @ G, S))
    out.append(Check("algorithms.adagrad_psd_monotone", mono, 1e-9))
    out.append(Check("algorithms.adagrad_sqrt", sq, 1e-9, "||G^2 - S|| / ||S||"))

    mismatch = 0
    for trial in range(10):
        n = 5
        eta = 0.5 + trial * 0.1
        hedge = algorithms.Hedge(n, eta=eta)
        ftl = algorithms.FTL(n)
        best = trial % n
        for _ in range(3):
            loss = np.full(n, 1.0)
            loss[best] = -1.0
            hedge.update(loss)
            ftl.update(loss)
        # best leads by 6 > 2/eta for eta >= 0.5
        if int(np.argmax(hedge.predict())) != int(np.argmax(ftl.predict())):
            mismatch += 1
    out.append(Check("algorithms.hedge_ftl_coupling", float(mismatch), 0.0))
    return out


# ---------------------------------------------------------------- adversaries


def check_adversaries():
    streams = [
        adversaries.gen_stochastic_lowrank(50, 3, 100, seed=11),
        adversaries.gen_approx_lowrank(50, 3, 100, 0.1, seed=11),
        adversaries.gen_hypercube(4, 64, seed=11),
        adversaries.gen_adagrad_case1(64, 20),
        adversaries.gen_adagrad_case2(64, 20),
    ]
    bound = max(float(np.max(np.abs(s.losses))) for s in streams) - 1.0
    over = 0
    for s in streams:
        if s.kind != "approx_lowrank" and adversaries.numeric_rank(s.losses) > s.rank_certificate:
            over += 1
    approx = streams[1]
    noise = float(np.max(np.abs(approx.losses - approx.meta["lowrank_part"])))
    a = adversaries.gen_stochastic_lowrank(30, 2, 50, seed=5).losses
    b = adversaries.gen_stochastic_lowrank(30, 2, 50, seed=5).losses
    same = 0.0 if a.tobytes() == b.tobytes() else 1.0
    hc = streams[2]
    counts = np.bincount(hc.meta["coords"], minlength=4)
    T, d = hc.T, 4
    sched = 0.0 if counts.min() >= T // d and counts.max() <= -(-T // d) else 1.0
    return [
        Check("adversaries.entry_bounds", max(bound, 0.0), 0.0, "max |entry| - 1"),
        Check("adversaries.rank_certificate", float(over), 0.0, "streams whose numeric rank exceeds the certificate"),
        Check("adversaries.approx_certificate", noise, 0.1, "||L - (1-eps) L_low||_inf against eps"),
        Check("adversaries.determinism", same, 0.0),
        Check("adversaries.hypercube_schedule", sched, 0.0),
    ]


# ---------------------------------------------------------------- harness


def check_harness():
    import json

    from . import harness

    cfg = {"experiments": [
        {"name": "h", "algorithm": "hedge", "adversary": {"kind": "adagrad_case1", "N": 16, "T": 30}, "seeds": [1]},
        {"name": "low", "algorithm": "lowrank",
         "adversary": {"kind": "stochastic_lowrank", "N": 20, "d": 2, "T": 40}, "seeds": [3, 4]},
    ]}
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        path = tmp / "cfg.json"
        path.write_text(json.dumps(cfg))
        harness.run(path, tmp / "serial", jobs=1, timing=False)
        harness.run(path, tmp / "parallel", jobs=2, timing=False)
        worst = 0.0
        for exp in cfg["experiments"]:
            for seed in exp["seeds"]:
                trace = harness.read_round_csv(tmp / "serial" / "runs" / harness.round_file_name(exp["name"], seed))
                stream = harness.build_stream(exp["adversary"], seed)
                again = harness.regret_from_trace(stream.losses, trace["round_loss"])
                worst = max(worst, float(np.max(np.abs(again - trace["cum_regret"]))))
        differ = 0
        for f in sorted((tmp / "serial").rglob("*.csv")):
            g = tmp / "parallel" / f.relative_to(tmp / "serial")
            if not g.exists() or f.read_bytes() != g.read_bytes():
                differ += 1
    return [
        Check("harness.csv_roundtrip", worst, 1e-9),
        Check("harness.parallel_equals_serial", float(differ), 0.0, "files that differ"),
    ]


SUITES = {
    "linalg": check_linalg,
    "geometry": check_geometry,
    "simplex_qp": check_simplex_qp,
    "algorithms": check_algorithms,
    "adversaries": check_adversaries,
    "harness": check_harness,
}


def run_suite(name_filter=None, span_tol=algorithms.SPAN_TOL):
    """Run every suite whose checks may match ``name_filter`` (substring)."""
    checks = []
    prefix = name_filter.split(".")[0] if name_filter else None
    only = prefix if prefix in SUITES else None
    for suite, fn in SUITES.items():
        if only and suite != only:
            continue
        found = fn(span_tol=span_tol) if suite == "algorithms" else fn()
        if name_filter:
            found = [c for c in found if name_filter in c.name]
        checks.extend(found)
    return checks
