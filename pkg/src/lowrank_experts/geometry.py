"""Approximate minimum-volume ellipsoids for zero-symmetric bodies.

Two bodies show up in the learners:

* ``conv{±p_i}``, handled directly by :func:`khachiyan_mvee`;
* the slab polytope ``{x : ||A x||_inf <= 1}``, which is the polar of
  ``conv{±a_i}`` and is handled by :func:`enclosing_ellipsoid`.

An ellipsoid is stored by its shape matrix ``M``: ``E(M) = {x : x^T M^+ x <= 1}``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import ContractError, DegenerateInputError, NumericError
from .rng import Xoshiro256

DEFAULT_EPS = 0.5


@dataclass
class Ellipsoid:
    shape: np.ndarray
    # certified ratio between the outer ellipsoid and the largest scaled copy
    # known to fit inside the body (sqrt of the final kappa / 1 for raw shapes)
    factor: float = 1.0

    def __post_init__(self):
        M = linalg.check_symmetric(self.shape, rtol=1e-9)
        if M.shape[0]:
            w, Q = linalg.sym_eig(M)
            lam = float(np.max(np.abs(w)))
            if w[-1] < -1e-10 * lam:
                raise ContractError(f"ellipsoid shape is not PSD (min eigenvalue {w[-1]:.3e})")
            if w[-1] < 0:
                M = linalg.symmetrize((Q * np.clip(w, 0.0, None)) @ Q.T)
        self.shape = M

    @property
    def dim(self):
        return self.shape.shape[0]

    def scaled(self, r):
        """The ellipsoid ``r * E``."""
        return Ellipsoid(self.shape * (r * r), self.factor)


@dataclass
class SlabPolytope:
    """``P_A = {x : ||A x||_inf <= 1}`` for an (N, d) matrix of slab normals."""

    A: np.ndarray
    rank: int = field(init=False)

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 2 or A.shape[1] == 0:
            raise ContractError(f"slab matrix must be 2-d with d >= 1, got shape {A.shape}")
        self.A = A
        self.rank = _point_rank(A)
        if self.rank < A.shape[1]:
            raise DegenerateInputError(
                f"slab normals span only {self.rank} of {A.shape[1]} dimensions; the polytope is unbounded"
            )

    @property
    def dim(self):
        return self.A.shape[1]

    def norm(self, x):
        """Gauge of the polytope, ``||A x||_inf`` (works on stacked rows too)."""
        return np.max(np.abs(np.asarray(x) @ self.A.T), axis=-1)


def _point_rank(P, rtol=1e-10):
    P = np.asarray(P, dtype=float)
    if P.size == 0:
        return 0
    w, _ = linalg.sym_eig(linalg.symmetrize(P.T @ P))
    if w[0] <= 0:
        return 0
    return int(np.sum(w > rtol * w[0]))


@dataclass
class KhachiyanResult:
    weights: np.ndarray
    X: np.ndarray          # sum_i u_i p_i p_i^T
    kappa: float           # max_i p_i^T X^{-1} p_i at termination
    iterations: int
    logdet: list


def khachiyan_weights(points, eps=DEFAULT_EPS, max_iter=None, away_steps=True):
    """Khachiyan's barycentric iteration on the symmetric set ``{±p_i}``.

    Keeps weights ``u`` on the simplex and ``X(u) = sum u_i p_i p_i^T``.
    Each step moves weight toward the point with the largest leverage
    ``kappa_i = p_i^T X^{-1} p_i`` using the exact line search
    ``beta = (kappa/d - 1) / (kappa - 1)``.  With ``away_steps`` the
    Todd-Yildirim variant may instead remove weight from the supported point
    with the smallest leverage, which makes convergence linear.

    Stops once ``max kappa <= (1 + eps) d``.  Since ``sum_i u_i kappa_i = d``
    at every iterate, ``max kappa / d`` bounds the approximation factor.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    m, d = P.shape
    if not 0 < eps:
        raise ContractError(f"eps must be positive, got {eps}")
    r = _point_rank(P)
    if r < d:
        raise DegenerateInputError(f"points span only {r} of {d} dimensions")
    if max_iter is None:
        max_iter = 100 * m * d

    u = np.full(m, 1.0 / m)
    logdet = []
    it = 0
    while True:
        X = (P.T * u) @ P
        L = np.linalg.cholesky(linalg.symmetrize(X))
        Z = np.linalg.solve(L, P.T)
        kappa = np.sum(Z * Z, axis=0)
        logdet.append(2.0 * float(np.sum(np.log(np.diag(L)))))
        j = int(np.argmax(kappa))
        kmax = float(kappa[j])
        if kmax <= (1.0 + eps) * d:
            return KhachiyanResult(u, linalg.symmetrize(X), kmax, it, logdet)
        if it >= max_iter:
            raise NumericError(
                f"Khachiyan iteration did not reach eps={eps} in {max_iter} steps "
                f"(final gap kappa/d - 1 = {kmax / d - 1.0:.3e})"
            )
        step_idx, kap = j, kmax
        if away_steps:
            supp = np.flatnonzero(u > 0)
            i = supp[np.argmin(kappa[supp])]
            if d - kappa[i] > kmax - d:
                step_idx, kap = int(i), float(kappa[i])
        if step_idx == j:
            beta = (kap / d - 1.0) / (kap - 1.0)
        else:
            # away step: the objective decreases in beta all the way to the
            # drop point unless kappa > 1, where the usual critical point applies
            ui = u[step_idx]
            drop = -ui / (1.0 - ui)
            beta = drop if kap <= 1.0 else max((kap / d - 1.0) / (kap - 1.0), drop)
        u = (1.0 - beta) * u
        u[step_idx] += beta
        u = np.clip(u, 0.0, None)
        u /= u.sum()
        it += 1


def khachiyan_mvee(points, eps=DEFAULT_EPS, max_iter=None, away_steps=True):
    """(1+eps)-approximate MVEE of ``conv{±p_i}``, centred at the origin.

    Returned shape ``M = kappa X`` puts every ``±p_i`` in ``E(M)`` and the
    copy shrunk by ``sqrt(kappa) <= sqrt((1+eps) d)`` inside the hull.
    """
    if not 0 < eps <= 1:
        raise ContractError(f"eps must lie in (0, 1], got {eps}")
    res = khachiyan_weights(points, eps=eps, max_iter=max_iter, away_steps=away_steps)
    return Ellipsoid(res.kappa * res.X, factor=float(np.sqrt(res.kappa)))


def polar(E):
    """Polar body of ``E(M)``, which is ``E(M^{-1})``."""
    M = np.asarray(E.shape, dtype=float)
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise ContractError("polar requires a positive definite shape matrix") from None
    w, Q = linalg.sym_eig(M)
    if w[-1] <= 1e-14 * w[0]:
        raise ContractError("polar requires a positive definite shape matrix")
    return Ellipsoid(linalg.symmetrize((Q / w) @ Q.T), factor=E.factor)


def enclosing_ellipsoid(P, eps=DEFAULT_EPS, max_iter=None):
    """Ellipsoid ``E(M)`` with ``E(M) / sqrt((1+eps) d) ⊆ P_A ⊆ E(M)``.

    Runs Khachiyan on the slab normals (the vertices of the polar body),
    then polars the result.  With weights ``u`` the outcome is simply
    ``M = X(u)^{-1}``: any ``x`` with ``|a_i.x| <= 1`` has
    ``x^T X x = sum u_i (a_i.x)^2 <= 1``, and the inner bound follows from
    ``kappa_i <= (1+eps) d``.
    """
    if not isinstance(P, SlabPolytope):
        P = SlabPolytope(P)
    if not 0 < eps <= 1:
        raise ContractError(f"eps must lie in (0, 1], got {eps}")
    res = khachiyan_weights(P.A, eps=eps, max_iter=max_iter)
    outer = Ellipsoid(res.kappa * res.X, factor=float(np.sqrt(res.kappa)))
    inner_polar = polar(outer)
    # polar of E(kappa X) is E((kappa X)^{-1}); scale by kappa to make it the outer body
    return Ellipsoid(inner_polar.shape * res.kappa, factor=float(np.sqrt(res.kappa)))


def contains(E, x, tol=1e-9):
    """``x^T M^+ x <= 1 + tol``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (E.dim,):
        raise ContractError(f"point of shape {x.shape} does not match ellipsoid dimension {E.dim}")
    return bool(x @ linalg.pinv(E.shape) @ x <= 1.0 + tol)


def containment_certificates(P, E, eps, n_samples=1000, seed=0):
    """Sampled evidence for ``E / sqrt((1+eps) d) ⊆ P ⊆ E``.

    Returns a dict with

    * ``outer``: largest ``x^T M^{-1} x`` over rejection-sampled points of P
      and boundary points of P along the rows of A and the axes of M;
    * ``inner``: largest ``||A y||_inf`` over points sampled uniformly on the
      boundary of the shrunk ellipsoid.

    Both are <= 1 (up to rounding) when the sandwich holds.
    """
    if not isinstance(P, SlabPolytope):
        P = SlabPolytope(P)
    rng = Xoshiro256(seed)
    d = P.dim
    M = E.shape
    Minv = linalg.pinv(M)

    box = np.sqrt(np.clip(np.diag(M), 0.0, None))
    accepted = []
    count = 0
    while count < n_samples:
        cand = (2.0 * rng.random((4 * n_samples, d)) - 1.0) * box
        good = cand[P.norm(cand) <= 1.0]
        accepted.append(good)
        count += good.shape[0]
    samples = np.vstack(accepted)[:n_samples]

    _, axes = linalg.sym_eig(M)
    dirs = np.vstack([P.A, axes.T, -P.A, -axes.T])
    gauge = P.norm(dirs)
    boundary = dirs[gauge > 0] / gauge[gauge > 0, None]
    pts = np.vstack([samples, boundary])
    outer = float(np.max(np.einsum("ij,jk,ik->i", pts, Minv, pts)))

    g = rng.normal((n_samples, d))
    sphere = g / np.linalg.norm(g, axis=1, keepdims=True)
    root = linalg.sqrt_psd(M)
    shrink = 1.0 / np.sqrt((1.0 + eps) * d)
    y = shrink * sphere @ root
    inner = float(np.max(P.norm(y)))
    return {"outer": outer, "inner": inner, "n_samples": int(samples.shape[0])}
