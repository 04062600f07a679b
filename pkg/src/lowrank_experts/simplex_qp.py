"""Quadratic programs over the probability simplex.

Every update in the package reduces to a metric projection

    argmin_{x in simplex} 1/2 (x - y)^T H (x - y)

for some H > 0.  The mirror-descent step ``argmin l.x + ||x - x_t||_H^2 / eta``
is the projection of ``y = x_t - (eta/2) H^{-1} l``.

Dense H is handled by a primal active-set method.  Structured H of the form
``s I + F F^T`` (see :class:`~lowrank_experts.linalg.ShiftedLowRank`) is handled
through its r-dimensional dual, where each Newton step solves the
equality-constrained system on the current face; that costs O(N log N + N r^2)
per step instead of O(N^3).
"""

import numpy as np

from . import linalg
from .errors import ContractError, NumericError
from .linalg import ShiftedLowRank

KKT_TOL = 1e-8
PG_MAX_ITER = 100_000


def euclidean_simplex_projection(y):
    """Sort-and-threshold Euclidean projection onto the simplex."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise ContractError(f"expected a non-empty vector, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ContractError("vector has non-finite entries")
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, y.size + 1)
    rho = np.count_nonzero(u - css / ind > 0)
    theta = css[rho - 1] / rho
    return np.maximum(y - theta, 0.0)


def kkt_residual(grad, x):
    """Natural residual of the simplex KKT system at ``x``.

    With ``theta`` the multiplier of the sum constraint (read off the
    largest coordinate), reports the worst of ``|sum x - 1|``, negativity of
    ``x`` and ``|min(x_i, grad_i - theta)|``.  Zero exactly at the optimum.
    """
    grad = np.asarray(grad, dtype=float)
    x = np.asarray(x, dtype=float)
    theta = grad[int(np.argmax(x))]
    nat = np.abs(np.minimum(x, grad - theta))
    return float(max(abs(x.sum() - 1.0), max(-x.min(), 0.0), nat.max()))


def _clean(x):
    x = np.where(x < 0.0, 0.0, x)
    return x


class _Metric:
    """Uniform matvec/solve access to dense or structured H."""

    def __init__(self, H):
        if isinstance(H, ShiftedLowRank):
            self.H = H
            self.n = H.n
            self.structured = True
        else:
            H = linalg.check_symmetric(H, rtol=1e-10)
            try:
                self._chol = np.linalg.cholesky(H)
            except np.linalg.LinAlgError:
                raise ContractError("metric is not positive definite") from None
            self.H = H
            self.n = H.shape[0]
            self.structured = False

    def matvec(self, x):
        if self.structured:
            return self.H.matvec(x)
        return self.H @ x

    def solve(self, b):
        if self.structured:
            return self.H.solve(b)
        L = self._chol
        return np.linalg.solve(L.T, np.linalg.solve(L, b))

    def scale(self):
        if self.structured:
            return float(np.max(self.H.diagonal()))
        return float(np.max(np.diag(self.H)))


def _active_set(H, y, max_pivots):
    """Primal active-set method for the dense projection.

    Starts at the Euclidean projection, which is feasible, and keeps its
    support as the working face.  Each pivot minimises over the face with
    ``1^T x = 1``; a blocked step drops the blocking coordinate, a face
    optimum with a negative multiplier adds the worst coordinate.
    Returns None if the pivot budget runs out.
    """
    n = y.size
    Hy = H @ y
    x = euclidean_simplex_projection(y)
    work = x > 0
    ones = np.ones(n)
    for _ in range(max_pivots):
        idx = np.flatnonzero(work)
        Hs = H[np.ix_(idx, idx)]
        a = np.linalg.solve(Hs, Hy[idx])
        b = np.linalg.solve(Hs, ones[idx])
        theta = (1.0 - a.sum()) / b.sum()
        xs = a + theta * b
        if np.all(xs >= 0.0):
            x = np.zeros(n)
            x[idx] = xs
            lam = H @ (x - y) - theta
            lam[idx] = 0.0
            scale = max(1.0, float(np.max(np.abs(lam))))
            j = int(np.argmin(lam))
            if lam[j] >= -1e-13 * scale:
                return x
            work[j] = True
            continue
        step = xs - x[idx]
        neg = step < 0
        ratios = np.full(idx.size, np.inf)
        ratios[neg] = x[idx][neg] / -step[neg]
        k = int(np.argmin(ratios))
        alpha = min(ratios[k], 1.0)
        x[idx] = x[idx] + alpha * step
        x[idx[k]] = 0.0
        drop = idx[x[idx] <= 0.0]
        x[drop] = 0.0
        work[drop] = False
        if not np.any(work):
            work[idx[np.argmax(xs)]] = True
    return None


def _lowrank_dual_newton(H, y, max_iter=200):
    """Projection under ``s I + F F^T`` through its r-dimensional dual.

    Writing ``R = F / sqrt(s)``, the projection minimises
    ``1/2 ||x - y||^2 + 1/2 ||R^T (x - y)||^2``.  Dualising the second term
    gives ``x(w) = P(y - R w)`` (Euclidean projection P) and the concave
    dual whose gradient is ``F(w) = R^T (x(w) - y) - w``.  Newton steps on
    the current support solve the face system exactly, so the iteration
    ends once the face is identified.  Returns None on failure.
    """
    R = H.factor / np.sqrt(H.shift)
    r = R.shape[1]
    if r == 0:
        return euclidean_simplex_projection(y)

    def evaluate(w):
        x = euclidean_simplex_projection(y - R @ w)
        diff = x - y
        Rd = R.T @ diff
        F = Rd - w
        g = 0.5 * diff @ diff + w @ Rd - 0.5 * w @ w
        return x, F, g

    w = np.zeros(r)
    x, F, g = evaluate(w)
    eye = np.eye(r)
    for _ in range(max_iter):
        if np.max(np.abs(F)) <= 1e-14 * (1.0 + np.max(np.abs(w))):
            return x
        S = x > 0
        RS = R[S]
        cs = RS.sum(axis=0)
        K = RS.T @ RS - np.outer(cs, cs) / S.sum() + eye
        delta = np.linalg.solve(K, F)
        slope = F @ delta
        t = 1.0
        while True:
            w_new = w + t * delta
            x_new, F_new, g_new = evaluate(w_new)
            if g_new >= g + 1e-4 * t * slope or t < 1e-10:
                break
            t *= 0.5
        if t < 1e-10:
            # no ascent possible: already at the optimum to rounding
            return x if np.max(np.abs(F)) <= 1e-9 * (1.0 + np.max(np.abs(w))) else None
        if np.array_equal(w_new, w):
            return x
        w, x, F, g = w_new, x_new, F_new, g_new
    return None


def _projected_gradient(metric, y, x0, tol, max_iter=PG_MAX_ITER):
    """Fallback: projected gradient with Armijo backtracking."""
    x = euclidean_simplex_projection(x0)

    def f(z):
        d = z - y
        return 0.5 * d @ metric.matvec(d)

    step = 1.0 / max(metric.scale(), 1e-12)
    fx = f(x)
    for _ in range(max_iter):
        grad = metric.matvec(x - y)
        if kkt_residual(grad, x) <= tol:
            return x
        while True:
            cand = euclidean_simplex_projection(x - step * grad)
            fc = f(cand)
            if fc <= fx + grad @ (cand - x) + (0.5 / step) * np.sum((cand - x) ** 2) + 1e-15 * abs(fx):
                break
            step *= 0.5
            if step < 1e-300:
                return x
        x, fx = cand, fc
        step *= 1.5
    grad = metric.matvec(x - y)
    raise NumericError(f"projected gradient did not converge (KKT residual {kkt_residual(grad, x):.3e})")


def _project(metric, y, tol=KKT_TOL):
    y = np.asarray(y, dtype=float)
    if y.shape != (metric.n,):
        raise ContractError(f"vector of shape {y.shape} does not match metric of size {metric.n}")
    if not np.all(np.isfinite(y)):
        raise ContractError("vector has non-finite entries")
    if metric.structured:
        x = _lowrank_dual_newton(metric.H, y)
    else:
        x = _active_set(metric.H, y, max_pivots=10 * metric.n)
    if x is not None:
        x = _clean(x)
        if kkt_residual(metric.matvec(x - y), x) <= tol:
            return x
    return _clean(_projected_gradient(metric, y, y if x is None else x, tol))


def metric_projection(H, y, tol=KKT_TOL):
    """``argmin_{x in simplex} ||y - x||_H^2`` for dense or structured H > 0."""
    return _project(_Metric(H), y, tol)


def mahalanobis_simplex_projection(G, y, tol=KKT_TOL):
    """The AdaGrad projection ``argmin_{x in simplex} ||y - x||_G^2``."""
    return metric_projection(G, y, tol)


def omd_step(H, eta, x_t, loss, tol=KKT_TOL):
    """One mirror-descent step ``argmin_{x in simplex} l.x + ||x - x_t||_H^2 / eta``."""
    if not (np.isfinite(eta) and eta > 0):
        raise ContractError(f"step size must be finite and positive, got {eta}")
    metric = _Metric(H)
    x_t = np.asarray(x_t, dtype=float)
    loss = np.asarray(loss, dtype=float)
    if x_t.shape != (metric.n,) or loss.shape != (metric.n,):
        raise ContractError("decision and loss must match the metric dimension")
    y = x_t - 0.5 * eta * metric.solve(loss)
    x = _project(metric, y, tol)
    grad = loss + (2.0 / eta) * metric.matvec(x - x_t)
    res = kkt_residual(grad, x)
    if res > tol * max(1.0, 2.0 / eta):
        raise NumericError(f"mirror-descent step has KKT residual {res:.3e}")
    return x


def omd_objective(H, eta, x_t, loss, x):
    """Value of ``l.x + ||x - x_t||_H^2 / eta``."""
    d = np.asarray(x, dtype=float) - np.asarray(x_t, dtype=float)
    Hd = H.matvec(d) if isinstance(H, ShiftedLowRank) else np.asarray(H) @ d
    return float(np.asarray(loss) @ x + (d @ Hd) / eta)
