"""Online learners for prediction with expert advice.

Every learner follows the same protocol::

    x = learner.predict()     # distribution over the N experts
    learner.update(loss)      # loss vector of the round, entries in [-1, 1]

``predict`` before the first ``update`` returns the initial decision.
"""

import math

import numpy as np

from . import geometry, linalg
from .errors import ContractError, NumericError
from .linalg import OrthoBasis, ShiftedLowRank, span_residual
from .simplex_qp import mahalanobis_simplex_projection, omd_step

SPAN_TOL = 1e-7


class Learner:
    name = "learner"

    def __init__(self, n):
        if int(n) < 1:
            raise ContractError("need at least one expert")
        self.n = int(n)
        self.reset()

    def reset(self, seed=None):
        self.t = 0
        self.x = np.full(self.n, 1.0 / self.n)

    def predict(self):
        return self.x.copy()

    def update(self, loss):
        raise NotImplementedError

    def _check_loss(self, loss):
        loss = np.asarray(loss, dtype=float)
        if loss.shape != (self.n,):
            raise ContractError(f"loss of shape {loss.shape} does not match {self.n} experts")
        return loss


def _hedge_weights(cum, eta):
    z = -eta * (cum - cum.min())
    w = np.exp(z - z.max())
    return w / w.sum()


class Hedge(Learner):
    """Multiplicative weights, ``x_t(i) ∝ exp(-eta * cumulative loss of i)``.

    ``eta`` is a constant or a callable ``t -> eta_t``; otherwise ``sqrt(ln N / horizon)`` when the
    horizon is known, else the anytime rate ``sqrt(ln N / t)``.
    """

    name = "hedge"

    def __init__(self, n, eta=None, horizon=None):
        self.eta = eta
        self.horizon = horizon
        super().__init__(n)

    def reset(self, seed=None):
        super().reset(seed)
        self.cum = np.zeros(self.n)

    def rate(self, t):
        if callable(self.eta):
            return float(self.eta(t))
        if self.eta is not None:
            return float(self.eta)
        if self.horizon:
            return math.sqrt(math.log(self.n) / self.horizon)
        return math.sqrt(math.log(self.n) / t)

    def update(self, loss):
        loss = self._check_loss(loss)
        self.t += 1
        self.cum += loss
        self.x = _hedge_weights(self.cum, self.rate(self.t + 1))


class FTL(Learner):
    """Follow the leader: the vertex of the expert with the least cumulative loss.

    Ties go to the lowest index, so the first round plays expert 1.
    """

    name = "ftl"

    def reset(self, seed=None):
        self.t = 0
        self.cum = np.zeros(self.n)
        self.x = np.zeros(self.n)
        self.x[0] = 1.0

    def update(self, loss):
        loss = self._check_loss(loss)
        self.t += 1
        self.cum += loss
        self.x = np.zeros(self.n)
        self.x[int(np.argmin(self.cum))] = 1.0


def sqrt_schedule(dim, scale=4.0):
    """``eta_t = scale * sqrt(dim / t)``."""
    return lambda t: scale * math.sqrt(dim / t)


def subspace_regularizer(U, eps=1.0):
    """``I + U M U^T`` where ``E(M)`` encloses ``{w : ||U w||_inf <= 1}``.

    Returns ``(H, M)`` with H in factored form.
    """
    U = np.asarray(U, dtype=float)
    E = geometry.enclosing_ellipsoid(geometry.SlabPolytope(U), eps=eps)
    root = np.linalg.cholesky(E.shape)
    return ShiftedLowRank(1.0, U @ root), E.shape


class OMDFixed(Learner):
    """Mirror descent with a fixed quadratic regularizer ``||x||_H^2``."""

    name = "omd_fixed"

    def __init__(self, H, eta_schedule, x1=None):
        self.H = H
        self.eta_schedule = eta_schedule
        self.x1 = None if x1 is None else np.asarray(x1, dtype=float)
        n = H.n if isinstance(H, ShiftedLowRank) else np.asarray(H).shape[0]
        super().__init__(n)

    def reset(self, seed=None):
        super().reset(seed)
        if self.x1 is not None:
            self.x = self.x1.copy()

    def update(self, loss):
        loss = self._check_loss(loss)
        self.t += 1
        eta = self.eta_schedule(self.t)
        if eta == 0:
            return
        try:
            self.x = omd_step(self.H, eta, self.x, loss)
        except (NumericError, ContractError) as exc:
            raise NumericError(str(exc), round_index=self.t) from exc


class LowRankExperts(Learner):
    """Mirror descent whose regularizer tracks the span of observed losses.

    Keeps the first loss seen in each new direction as a column of ``B``.
    When a loss leaves span(B) the epoch restarts: ``k`` grows by one, the
    epoch clock resets, and ``H = I + B M B^T`` is rebuilt from an ellipsoid
    ``E(M)`` enclosing ``{w : ||B w||_inf <= 1}``.  Each round then takes a
    mirror-descent step with ``eta = eta_scale * sqrt(k / tau)``.

    With ``record=True`` the learner keeps, per round, the squared dual norm
    of the loss under the current H, and the H of every epoch.
    """

    name = "lowrank"

    def __init__(self, n, span_tol=SPAN_TOL, eps=1.0, eta_scale=4.0, record=False):
        self.span_tol = span_tol
        self.eps = eps
        self.eta_scale = eta_scale
        self.record = record
        super().__init__(n)

    def reset(self, seed=None):
        super().reset(seed)
        self.basis = []
        self.ortho = OrthoBasis(self.n)
        self.k = 0
        self.tau = 0
        self.M = np.zeros((0, 0))
        self.H = ShiftedLowRank(1.0, np.zeros((self.n, 0)))
        self.epochs = []
        self.dual_norms_sq = []
        self.eta = None

    def _rebuild(self):
        B = np.column_stack(self.basis)
        self.H, self.M = subspace_regularizer(B, eps=self.eps)
        if self.record:
            self.epochs.append({"start": self.t, "k": self.k, "H": self.H, "M": self.M})

    def update(self, loss):
        loss = self._check_loss(loss)
        self.t += 1
        try:
            res, direction = span_residual(self.ortho, loss)
            if res > self.span_tol * max(1.0, float(np.linalg.norm(loss))):
                self.basis.append(loss.copy())
                self.ortho.add(direction)
                self.k += 1
                self.tau = 0
                self._rebuild()
            self.tau += 1
            if self.record:
                self.dual_norms_sq.append(float(loss @ self.H.solve(loss)))
            if self.k == 0:
                # only the zero loss is in the empty span; eta would be 0
                self.eta = 0.0
                return
            self.eta = self.eta_scale * math.sqrt(self.k / self.tau)
            self.x = omd_step(self.H, self.eta, self.x, loss)
        except (NumericError, ContractError) as exc:
            raise NumericError(str(exc), round_index=self.t) from exc


class AdaGrad(Learner):
    """Full-matrix AdaGrad on the simplex.

    ``S_t = delta I + sum l l^T`` and ``G_t = S_t^{1/2}`` are kept in factored
    form on the span of the observed losses, so each round costs an
    eigendecomposition of an r x r matrix (r = rank of the losses so far).
    """

    name = "adagrad"

    def __init__(self, n, eta=1.0, delta=1.0, x1=None, span_tol=1e-12):
        if not eta > 0 or not delta > 0:
            raise ContractError("AdaGrad needs eta > 0 and delta > 0")
        self.eta = float(eta)
        self.delta = float(delta)
        self.span_tol = span_tol
        self.x1 = None if x1 is None else np.asarray(x1, dtype=float)
        super().__init__(n)

    def reset(self, seed=None):
        super().reset(seed)
        if self.x1 is not None:
            self.x = self.x1.copy()
        self.ortho = OrthoBasis(self.n)
        self.C = np.zeros((0, 0))   # Q^T (sum l l^T) Q on the tracked span
        self.G = ShiftedLowRank(math.sqrt(self.delta), np.zeros((self.n, 0)))

    @property
    def S(self):
        """``S_t`` in factored form."""
        Q = self.ortho.columns
        if Q.shape[1] == 0:
            return ShiftedLowRank(self.delta, Q)
        w, V = linalg.sym_eig(self.C)
        w = np.clip(w, 0.0, None)
        return ShiftedLowRank(self.delta, (Q @ V) * np.sqrt(w))

    def _extend(self, loss):
        res, direction = span_residual(self.ortho, loss)
        if res > self.span_tol * max(1.0, float(np.linalg.norm(loss))):
            self.ortho.add(direction)
            k = self.C.shape[0]
            C = np.zeros((k + 1, k + 1))
            C[:k, :k] = self.C
            self.C = C
        c = self.ortho.columns.T @ loss
        self.C = linalg.symmetrize(self.C + np.outer(c, c))

    def _sqrt(self):
        Q = self.ortho.columns
        w, V = linalg.sym_eig(self.C)
        w = np.clip(w, 0.0, None)
        sd = math.sqrt(self.delta)
        # sqrt(delta + w) - sqrt(delta), written to avoid cancellation
        gain = w / (np.sqrt(self.delta + w) + sd)
        return ShiftedLowRank(sd, (Q @ V) * np.sqrt(gain))

    def update(self, loss):
        loss = self._check_loss(loss)
        self.t += 1
        if not np.any(loss):
            return
        try:
            self._extend(loss)
            self.G = self._sqrt()
            y = self.x - self.eta * self.G.solve(loss)
            self.x = mahalanobis_simplex_projection(self.G, y)
        except (NumericError, ContractError) as exc:
            raise NumericError(str(exc), round_index=self.t) from exc


class MetaCombiner(Learner):
    """Two learners mixed by a two-expert Hedge on their realised losses.

    Default rate ``sqrt(2 ln 2 / T)`` is the Hoeffding-optimal choice for
    meta-losses in [-1, 1]; its regret against the better component is at
    most ``sqrt(2 T ln 2)``.
    """

    name = "combiner"

    def __init__(self, learner_a, learner_b, eta=None, horizon=None):
        if learner_a.n != learner_b.n:
            raise ContractError("combined learners must share the number of experts")
        self.components = (learner_a, learner_b)
        self.eta = eta
        self.horizon = horizon
        super().__init__(learner_a.n)

    def reset(self, seed=None):
        self.t = 0
        for c in self.components:
            c.reset(seed)
        self.meta_cum = np.zeros(2)
        self.lam = np.full(2, 0.5)
        self._refresh()

    def rate(self, t):
        if self.eta is not None:
            return float(self.eta)
        if self.horizon:
            return math.sqrt(2.0 * math.log(2.0) / self.horizon)
        return math.sqrt(2.0 * math.log(2.0) / t)

    def _refresh(self):
        self._preds = [c.predict() for c in self.components]
        self.x = self.lam[0] * self._preds[0] + self.lam[1] * self._preds[1]

    def update(self, loss):
        loss = self._check_loss(loss)
        self.t += 1
        self.meta_cum += np.array([p @ loss for p in self._preds])
        for c in self.components:
            c.update(loss)
        self.lam = _hedge_weights(self.meta_cum, self.rate(self.t + 1))
        self._refresh()


def regret(L, decisions):
    """``sum_t x_t . l_t - min_i sum_t l_t(i)`` for L of shape (N, T)."""
    L = np.asarray(L, dtype=float)
    X = np.asarray(decisions, dtype=float)
    if X.ndim != 2 or X.shape != (L.shape[1], L.shape[0]):
        raise ContractError(
            f"decisions of shape {X.shape} do not match a loss matrix of shape {L.shape} (need (T, N))"
        )
    learner_loss = float(np.sum(X * L.T))
    return learner_loss - float(np.min(L.sum(axis=1)))


def play(learner, L, keep_decisions=False):
    """Run a learner over the columns of L.

    Returns a dict with per-round ``round_loss`` and ``cum_regret`` arrays
    and, if requested, the (T, N) array of decisions.
    """
    L = np.asarray(L, dtype=float)
    N, T = L.shape
    if N != learner.n:
        raise ContractError(f"learner has {learner.n} experts, stream has {N}")
    round_loss = np.empty(T)
    cum_regret = np.empty(T)
    decisions = np.empty((T, N)) if keep_decisions else None
    totals = np.zeros(N)
    running = 0.0
    for t in range(T):
        x = learner.predict()
        loss = L[:, t]
        round_loss[t] = x @ loss
        running += round_loss[t]
        totals += loss
        cum_regret[t] = running - totals.min()
        if keep_decisions:
            decisions[t] = x
        learner.update(loss)
    out = {"round_loss": round_loss, "cum_regret": cum_regret}
    if keep_decisions:
        out["decisions"] = decisions
    return out
