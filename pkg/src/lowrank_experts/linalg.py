"""Small dense symmetric linear algebra.

Everything here works on plain ``numpy`` arrays.  The eigensolver is a
cyclic Jacobi method with a round-robin (parallel) ordering so that each
step rotates n/2 disjoint index pairs at once; this keeps the Python-level
loop count at O(n) per sweep.

:class:`ShiftedLowRank` represents ``s*I + F F^T`` without forming it.  The
regularizers used by the learners all have that shape, and the structured
form is what keeps per-round work linear in the number of experts.
"""

import numpy as np

from .errors import ContractError, NumericError

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
PINV_TOL = 1e-10
SQRT_NEG_TOL = 1e-10
SIZE_CAP = 4096
# above this size sym_eig hands over to LAPACK (see sym_eig docstring)
JACOBI_LIMIT = 128


def _as_square(S):
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise ContractError("matrix has non-finite entries")
    return S


def symmetrize(S):
    """Return the canonical symmetric copy ``(S + S^T) / 2``."""
    S = np.asarray(S, dtype=float)
    return 0.5 * (S + S.T)


def check_symmetric(S, rtol=1e-12):
    S = _as_square(S)
    scale = max(1.0, float(np.max(np.abs(S)))) if S.size else 1.0
    asym = float(np.max(np.abs(S - S.T))) if S.size else 0.0
    if asym > rtol * scale:
        raise ContractError(f"matrix is not symmetric (max |S - S^T| = {asym:.3e})")
    return symmetrize(S)


def _round_robin(n):
    """Pairings for the circle-method tournament on n players.

    Returns a list of (P, Q) index arrays; every unordered pair appears in
    exactly one round.  Odd n gets a dummy player whose pairs are dropped.
    """
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        P, Q = [], []
        for i in range(m // 2):
            p, q = players[i], players[m - 1 - i]
            if p < n and q < n:
                P.append(min(p, q))
                Q.append(max(p, q))
        rounds.append((np.array(P, dtype=int), np.array(Q, dtype=int)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(S, tol=JACOBI_TOL, max_sweeps=JACOBI_MAX_SWEEPS):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Iterates sweeps until the off-diagonal Frobenius norm falls to
    ``tol * ||S||_F``.  Returns ``(w, Q)`` with ``w`` sorted descending and
    ``S = Q diag(w) Q^T``.
    """
    A = check_symmetric(S).copy()
    n = A.shape[0]
    V = np.eye(n)
    if n == 0:
        return np.zeros(0), V
    fro = np.linalg.norm(A)
    if fro == 0.0:
        return np.zeros(n), V
    target = tol * fro
    schedule = _round_robin(n)

    def off_norm(M):
        off = M - np.diag(np.diag(M))
        return np.linalg.norm(off)

    sweeps = 0
    while off_norm(A) > target:
        if sweeps >= max_sweeps:
            raise NumericError(
                f"Jacobi failed to converge after {sweeps} sweeps "
                f"(off-diagonal norm {off_norm(A):.3e}, target {target:.3e})"
            )
        for P, Q in schedule:
            if P.size == 0:
                continue
            apq = A[P, Q]
            active = np.abs(apq) > 1e-300
            if not np.any(active):
                continue
            P, Q, apq = P[active], Q[active], apq[active]
            app, aqq = A[P, P], A[Q, Q]
            theta = (aqq - app) / (2.0 * apq)
            big = np.abs(theta) > 1e150
            safe = np.where(big, 1.0, theta)
            t = np.where(
                big,
                0.5 / np.where(big, theta, 1.0),
                np.where(safe >= 0, 1.0, -1.0) / (np.abs(safe) + np.sqrt(safe * safe + 1.0)),
            )
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c

            rp, rq = A[P, :].copy(), A[Q, :].copy()
            A[P, :] = c[:, None] * rp - s[:, None] * rq
            A[Q, :] = s[:, None] * rp + c[:, None] * rq
            cp, cq = A[:, P].copy(), A[:, Q].copy()
            A[:, P] = cp * c - cq * s
            A[:, Q] = cp * s + cq * c
            A[P, Q] = 0.0
            A[Q, P] = 0.0
            vp, vq = V[:, P].copy(), V[:, Q].copy()
            V[:, P] = vp * c - vq * s
            V[:, Q] = vp * s + vq * c
        sweeps += 1

    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order]


def sym_eig(S, method="auto", cap=SIZE_CAP, jacobi_limit=JACOBI_LIMIT,
            tol=JACOBI_TOL, max_sweeps=JACOBI_MAX_SWEEPS):
    """Symmetric eigen-decomposition, eigenvalues in non-increasing order.

    ``method`` is ``"jacobi"``, ``"lapack"`` or ``"auto"``.  Auto uses Jacobi
    up to ``jacobi_limit`` rows and LAPACK's ``eigh`` beyond; the learners
    only ever decompose small matrices, so the LAPACK branch exists for
    diagnostics on large Gram matrices.
    """
    S = check_symmetric(S)
    n = S.shape[0]
    if n > cap:
        raise ContractError(f"matrix size {n} exceeds the configured cap {cap}")
    if method == "auto":
        method = "jacobi" if n <= jacobi_limit else "lapack"
    if method == "jacobi":
        return jacobi_eigh(S, tol=tol, max_sweeps=max_sweeps)
    if method == "lapack":
        w, Q = np.linalg.eigh(S)
        return w[::-1].copy(), Q[:, ::-1].copy()
    raise ContractError(f"unknown eigensolver {method!r}")


def pinv(S, tol=PINV_TOL):
    """Moore-Penrose pseudo-inverse of a symmetric PSD matrix.

    Eigenvalues below ``tol * lambda_max`` are treated as zero.
    """
    w, Q = sym_eig(S)
    if w.size == 0:
        return np.zeros_like(Q)
    lam_max = float(np.max(np.abs(w)))
    if lam_max == 0.0:
        return np.zeros_like(Q)
    keep = w > tol * lam_max
    inv = np.zeros_like(w)
    inv[keep] = 1.0 / w[keep]
    return symmetrize((Q * inv) @ Q.T)


def sqrt_psd(S, neg_tol=SQRT_NEG_TOL):
    """Symmetric PSD square root.

    Small negative eigenvalues (down to ``-neg_tol * lambda_max``) are
    rounding noise and get clamped; anything more negative is an error.
    """
    w, Q = sym_eig(S)
    if w.size == 0:
        return np.zeros_like(Q)
    lam_max = max(float(np.max(np.abs(w))), 0.0)
    if w[-1] < -neg_tol * lam_max:
        raise NumericError(f"matrix is not PSD (min eigenvalue {w[-1]:.3e})")
    root = np.sqrt(np.clip(w, 0.0, None))
    return symmetrize((Q * root) @ Q.T)


class OrthoBasis:
    """Orthonormal basis of a growing subspace of R^dim.

    Projections use modified Gram-Schmidt with one reorthogonalization pass.
    """

    def __init__(self, dim, tol=1e-10):
        self.dim = int(dim)
        self.tol = tol
        self._cols = []

    @property
    def k(self):
        return len(self._cols)

    @property
    def columns(self):
        if not self._cols:
            return np.zeros((self.dim, 0))
        return np.column_stack(self._cols)

    def residual(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,):
            raise ContractError(f"vector of shape {v.shape} does not match basis dimension {self.dim}")
        r = v.copy()
        for _ in range(2):
            for q in self._cols:
                r -= (q @ r) * q
        return r

    def add(self, direction):
        """Append a unit vector, orthogonalizing it once more against the basis."""
        r = self.residual(direction)
        nrm = np.linalg.norm(r)
        if nrm == 0.0:
            raise ContractError("cannot add a direction that lies in the span")
        q = r / nrm
        for c in self._cols:
            if abs(c @ q) > self.tol:
                raise NumericError(f"lost orthogonality while extending basis (|<q, c>| = {abs(c @ q):.2e})")
        self._cols.append(q)
        return q


def span_residual(basis, v):
    """Distance from ``v`` to span(basis) and the unit residual direction.

    Returns ``(norm, direction)``; ``direction`` is None when ``v`` lies
    exactly in the span.
    """
    r = basis.residual(v)
    nrm = float(np.linalg.norm(r))
    if nrm > 0.0:
        return nrm, r / nrm
    return nrm, None


class ShiftedLowRank:
    """The symmetric operator ``shift * I + F @ F.T`` with ``F`` of shape (n, r)."""

    def __init__(self, shift, factor):
        factor = np.asarray(factor, dtype=float)
        if factor.ndim != 2:
            raise ContractError("factor must be a 2-d array")
        if not shift > 0:
            raise ContractError(f"shift must be positive, got {shift}")
        self.shift = float(shift)
        self.factor = factor
        self._core = None

    @property
    def n(self):
        return self.factor.shape[0]

    @property
    def shape(self):
        return (self.n, self.n)

    def _core_solve(self, b):
        # (shift*I_r + F^T F)^{-1} b
        if self._core is None:
            F = self.factor
            core = self.shift * np.eye(F.shape[1]) + F.T @ F
            self._core = np.linalg.cholesky(core)
        L = self._core
        return np.linalg.solve(L.T, np.linalg.solve(L, b))

    def matvec(self, x):
        x = np.asarray(x, dtype=float)
        return self.shift * x + self.factor @ (self.factor.T @ x)

    __matmul__ = matvec

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        F = self.factor
        if F.shape[1] == 0:
            return b / self.shift
        return (b - F @ self._core_solve(F.T @ b)) / self.shift

    def quad(self, x):
        x = np.asarray(x, dtype=float)
        y = self.factor.T @ x
        return self.shift * float(x @ x) + float(y @ y)

    def diagonal(self):
        return self.shift + np.sum(self.factor ** 2, axis=1)

    def dense(self):
        return symmetrize(self.shift * np.eye(self.n) + self.factor @ self.factor.T)


def _cholesky_pd(H, min_eig=1e-12):
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise ContractError("matrix is not positive definite") from None
    if np.min(np.diag(L)) ** 2 <= min_eig:
        raise ContractError("matrix is numerically singular")
    return L


def mahalanobis(H, x):
    """``sqrt(x^T H x)`` for positive definite ``H``."""
    x = np.asarray(x, dtype=float)
    if isinstance(H, ShiftedLowRank):
        return float(np.sqrt(max(H.quad(x), 0.0)))
    H = check_symmetric(H)
    _cholesky_pd(H)
    return float(np.sqrt(max(x @ H @ x, 0.0)))


def dual_norm(H, x):
    """``sqrt(x^T H^{-1} x)``, computed with a triangular solve rather than an inverse."""
    x = np.asarray(x, dtype=float)
    if isinstance(H, ShiftedLowRank):
        return float(np.sqrt(max(x @ H.solve(x), 0.0)))
    H = check_symmetric(H)
    L = _cholesky_pd(H)
    z = np.linalg.solve(L, x)
    return float(np.sqrt(z @ z))
