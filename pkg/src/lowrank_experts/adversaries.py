"""Loss-sequence generators and loss-stream serialization.

All generators draw from :class:`~lowrank_experts.rng.Xoshiro256`, so a
``(config, seed)`` pair always produces the same stream bit for bit.

Two on-disk formats are supported for a loss matrix ``L`` of shape (N, T):

* CSV with header ``t,i,loss``; ``t`` and ``i`` are 1-based, one row per
  entry, ordered by round then expert;
* binary: a 16-byte header of two little-endian uint64 values ``N`` and
  ``T``, then ``L`` as row-major little-endian float64 (N rows of T).
"""

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import linalg
from .errors import ContractError
from .rng import Xoshiro256

KINDS = ("stochastic_lowrank", "approx_lowrank", "hypercube", "adagrad_case1", "adagrad_case2")
RANK_TOL = 1e-8


@dataclass
class AdversaryConfig:
    kind: str
    N: int = 0
    d: int = 1
    T: int = 1
    eps: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown adversary kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.kind == "hypercube":
            if self.N in (0, None):
                self.N = 2 ** self.d
            if self.N != 2 ** self.d:
                raise ContractError(f"hypercube needs N = 2^d = {2 ** self.d}, got N = {self.N}")
        for name in ("N", "d", "T"):
            if int(getattr(self, name)) < 1:
                raise ContractError(f"{name} must be a positive integer")
        if self.kind in ("stochastic_lowrank", "approx_lowrank") and self.d > min(self.N, self.T):
            raise ContractError(f"rank d = {self.d} exceeds min(N, T) = {min(self.N, self.T)}")
        if self.kind == "hypercube" and self.T < self.d:
            raise ContractError("hypercube needs T >= d")
        if self.kind == "adagrad_case1" and self.N < 2:
            raise ContractError("adagrad_case1 needs N >= 2")
        if self.kind == "adagrad_case2" and self.N % 2:
            raise ContractError("adagrad_case2 needs an even number of experts")
        if self.kind == "approx_lowrank" and not 0 <= self.eps < 1:
            raise ContractError(f"eps must lie in [0, 1), got {self.eps}")


@dataclass
class LossStream:
    """A loss matrix with a rank certificate.

    ``losses[:, t]`` is the loss vector of round t+1.  ``embedding`` is the
    expert embedding U with ``losses = U V`` when the generator knows it.
    """

    losses: np.ndarray
    rank_certificate: int
    kind: str = "custom"
    embedding: np.ndarray = None
    meta: dict = field(default_factory=dict)

    @property
    def N(self):
        return self.losses.shape[0]

    @property
    def T(self):
        return self.losses.shape[1]

    def __iter__(self):
        for t in range(self.T):
            yield self.losses[:, t]

    def to_csv(self, path):
        write_csv(self.losses, path)

    def to_binary(self, path):
        write_binary(self.losses, path)


def _ball(rng, T, d):
    g = rng.normal((T, d))
    direction = g / np.linalg.norm(g, axis=1, keepdims=True)
    radius = rng.random(T) ** (1.0 / d)
    return direction * radius[:, None]


def _sphere(rng, N, d):
    g = rng.normal((N, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def gen_stochastic_lowrank(N, d, T, seed):
    """``l_t(i) = u_i . v_t`` with ``u_i`` uniform on the sphere and ``v_t`` i.i.d. uniform in the ball.

    The round vectors are drawn before the embedding, so for a fixed seed
    the sequence ``v_1..v_T`` does not depend on N.
    """
    cfg = AdversaryConfig("stochastic_lowrank", N=N, d=d, T=T, seed=seed)
    rng = Xoshiro256(seed)
    V = _ball(rng, T, d)
    U = _sphere(rng, N, d)
    L = np.clip(U @ V.T, -1.0, 1.0)
    return LossStream(L, d, cfg.kind, embedding=U, meta={"V": V})


def gen_approx_lowrank(N, d, T, eps, seed):
    """``(1 - eps) L_low + E`` with ``|E_ij| < eps`` uniform; rank_eps <= d by construction."""
    AdversaryConfig("approx_lowrank", N=N, d=d, T=T, eps=eps, seed=seed)
    base = gen_stochastic_lowrank(N, d, T, seed)
    if eps == 0:
        base.kind = "approx_lowrank"
        return base
    rng = Xoshiro256(seed)
    # skip the draws consumed by the low-rank part so the noise is a fresh segment
    _ball(rng, T, d)
    _sphere(rng, N, d)
    noise = (2.0 * rng.random_open((N, T)) - 1.0) * eps
    low = (1.0 - eps) * base.losses
    L = np.clip(low + noise, -1.0, 1.0)
    return LossStream(L, d, "approx_lowrank", embedding=base.embedding * (1.0 - eps),
                      meta={"V": base.meta["V"], "lowrank_part": low, "eps": eps})


def hypercube_vertices(d):
    """All 2^d sign vectors; row i has ``-1`` where bit j of i is set."""
    idx = np.arange(2 ** d)[:, None]
    bits = (idx >> np.arange(d)[None, :]) & 1
    return 1.0 - 2.0 * bits


def gen_hypercube(d, T, seed):
    """Randomised hypercube adversary: ``l_t = U (y_t e_{j_t})`` with cyclic ``j_t`` and Rademacher ``y_t``."""
    AdversaryConfig("hypercube", N=2 ** d, d=d, T=T, seed=seed)
    rng = Xoshiro256(seed)
    U = hypercube_vertices(d)
    signs = rng.signs(T)
    coords = np.arange(T) % d
    L = U[:, coords] * signs[None, :]
    return LossStream(L, d, "hypercube", embedding=U, meta={"signs": signs, "coords": coords})


def adagrad_case1_vector(N):
    e = np.full(N, 1.0 / (N - 1))
    e[0] = -1.0
    return e


def adagrad_case2_vector(N):
    return np.concatenate([np.ones(N // 2), -np.ones(N // 2)])


def gen_adagrad_case1(N, T):
    """Constant loss ``e = (-1, 1/(N-1), ..., 1/(N-1))``."""
    AdversaryConfig("adagrad_case1", N=N, d=1, T=T)
    e = adagrad_case1_vector(N)
    return LossStream(np.tile(e[:, None], (1, T)), 1, "adagrad_case1", embedding=e[:, None])


def gen_adagrad_case2(N, T):
    """Alternating loss ``(-1)^(t+1) e`` with ``e = (+1 x N/2, -1 x N/2)``."""
    AdversaryConfig("adagrad_case2", N=N, d=1, T=T)
    e = adagrad_case2_vector(N)
    signs = np.where(np.arange(T) % 2 == 0, 1.0, -1.0)
    return LossStream(e[:, None] * signs[None, :], 1, "adagrad_case2", embedding=e[:, None])


def adagrad_hard_case(N, T, eta, delta):
    """Which rank-one sequence defeats AdaGrad(eta, delta) over T rounds.

    Returns ``"adagrad_case1"`` when the step size is too small for the
    constant sequence to be escaped in time, ``"adagrad_case2"`` when it is
    large enough for the alternating sequence to make it oscillate, and
    None when neither condition holds.
    """
    if T < 1.0 / (36.0 * eta ** 2) + math.sqrt(delta) / (3.0 * eta):
        return "adagrad_case1"
    if T < eta ** 2 * N - delta:
        return "adagrad_case2"
    return None


def generate(config):
    """Build the stream described by an :class:`AdversaryConfig`."""
    c = config
    if c.kind == "stochastic_lowrank":
        return gen_stochastic_lowrank(c.N, c.d, c.T, c.seed)
    if c.kind == "approx_lowrank":
        return gen_approx_lowrank(c.N, c.d, c.T, c.eps, c.seed)
    if c.kind == "hypercube":
        return gen_hypercube(c.d, c.T, c.seed)
    if c.kind == "adagrad_case1":
        return gen_adagrad_case1(c.N, c.T)
    return gen_adagrad_case2(c.N, c.T)


def numeric_rank(L, tol=RANK_TOL):
    """Numerical rank of a loss matrix.

    Eigen-decomposes the Gram matrix of the smaller side and counts
    eigenvalues above ``tol * lambda_max``.  The Gram matrix squares the
    singular values, so this is a cut at ``sqrt(tol)`` relative on them.
    """
    L = np.asarray(L, dtype=float)
    if L.size == 0:
        return 0
    gram = L.T @ L if L.shape[1] <= L.shape[0] else L @ L.T
    w, _ = linalg.sym_eig(linalg.symmetrize(gram))
    if w[0] <= 0:
        return 0
    return int(np.sum(w > tol * w[0]))


def write_csv(L, path):
    L = np.asarray(L, dtype=float)
    N, T = L.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "i", "loss"])
        for t in range(T):
            for i in range(N):
                w.writerow([t + 1, i + 1, repr(float(L[i, t]))])


def read_csv(path):
    rows = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != ["t", "i", "loss"]:
            raise ContractError(f"{path}: expected header t,i,loss, got {header}")
        for lineno, row in enumerate(r, start=2):
            try:
                rows.append((int(row[0]), int(row[1]), float(row[2])))
            except (ValueError, IndexError):
                raise ContractError(f"{path}:{lineno}: malformed row {row}") from None
    if not rows:
        return np.zeros((0, 0))
    T = max(t for t, _, _ in rows)
    N = max(i for _, i, _ in rows)
    L = np.full((N, T), np.nan)
    for t, i, v in rows:
        if t < 1 or i < 1:
            raise ContractError(f"{path}: indices are 1-based, got t={t}, i={i}")
        L[i - 1, t - 1] = v
    if np.isnan(L).any():
        raise ContractError(f"{path}: loss matrix has missing entries")
    return L


def write_binary(L, path):
    L = np.ascontiguousarray(L, dtype="<f8")
    N, T = L.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QQ", N, T))
        fh.write(L.tobytes(order="C"))


def read_binary(path):
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise ContractError(f"{path}: truncated header")
    N, T = struct.unpack("<QQ", data[:16])
    body = data[16:]
    if len(body) != 8 * N * T:
        raise ContractError(f"{path}: expected {N}x{T} float64 values, found {len(body) // 8}")
    return np.frombuffer(body, dtype="<f8").reshape(N, T).astype(float)


def load_stream(path):
    """Read a loss file by extension (``.csv`` or anything else as binary)."""
    path = Path(path)
    L = read_csv(path) if path.suffix.lower() == ".csv" else read_binary(path)
    if L.size and np.max(np.abs(L)) > 1.0 + 1e-12:
        raise ContractError(f"{path}: losses must lie in [-1, 1]")
    return LossStream(L, numeric_rank(L), "file", meta={"path": str(path)})
