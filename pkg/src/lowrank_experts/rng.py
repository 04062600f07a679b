"""Deterministic pseudo-random streams: xoshiro256** seeded by splitmix64.

The generator is fully specified here so that loss streams are bit-stable
across platforms and numpy versions:

* A 64-bit seed initializes a splitmix64 sequence.  Its first ``4 * LANES``
  outputs become the states of ``LANES`` independent xoshiro256** lanes
  (lane ``j`` takes outputs ``4j .. 4j+3``).
* One generator step advances every lane once and yields ``LANES`` words,
  lane 0 first.  The stream is the concatenation of these blocks.
* ``random()`` maps a word ``x`` to ``(x >> 11) * 2**-53`` in [0, 1);
  ``random_open()`` uses ``((x >> 11) + 0.5) * 2**-53`` in (0, 1).
* ``normal()`` is Box-Muller on consecutive pairs ``(u1, u2)`` of open
  uniforms: ``sqrt(-2 ln u1) * cos(2 pi u2)``; one normal per pair.
* ``signs()`` reads the top bit of each word: set -> -1, clear -> +1.
"""

import numpy as np

LANES = 64
_M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(seed, count):
    """First ``count`` outputs of splitmix64 started at ``seed`` (python ints)."""
    state = seed & _M64
    out = []
    for _ in range(count):
        state = (state + _GOLDEN) & _M64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
        out.append(z ^ (z >> 31))
    return out


def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


class Xoshiro256:
    """Lane-parallel xoshiro256** generator."""

    def __init__(self, seed, lanes=LANES):
        words = splitmix64(int(seed), 4 * lanes)
        st = np.array(words, dtype=np.uint64).reshape(lanes, 4).T
        self._s = [st[i].copy() for i in range(4)]
        self.lanes = lanes
        self._buf = np.zeros(0, dtype=np.uint64)

    @classmethod
    def from_state(cls, state):
        """Single-lane generator with an explicit 4-word state (for reference checks)."""
        g = cls.__new__(cls)
        g._s = [np.array([w], dtype=np.uint64) for w in state]
        g.lanes = 1
        g._buf = np.zeros(0, dtype=np.uint64)
        return g

    def _step(self):
        s0, s1, s2, s3 = self._s
        with np.errstate(over="ignore"):
            result = _rotl(s1 * np.uint64(5), 7) * np.uint64(9)
        t = s1 << np.uint64(17)
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        self._s[3] = _rotl(s3, 45)
        return result

    def next_u64(self, n):
        n = int(n)
        chunks = [self._buf]
        have = self._buf.size
        while have < n:
            block = self._step()
            chunks.append(block)
            have += block.size
        allw = np.concatenate(chunks) if len(chunks) > 1 else chunks[0]
        self._buf = allw[n:].copy()
        return allw[:n].copy()

    def random(self, size=None):
        if size is None:
            return float(self.random(1)[0])
        size = tuple(np.atleast_1d(size))
        n = int(np.prod(size))
        x = self.next_u64(n) >> np.uint64(11)
        return (x.astype(np.float64) * 2.0 ** -53).reshape(size)

    def random_open(self, size):
        size = tuple(np.atleast_1d(size))
        n = int(np.prod(size))
        x = self.next_u64(n) >> np.uint64(11)
        return ((x.astype(np.float64) + 0.5) * 2.0 ** -53).reshape(size)

    def normal(self, size):
        size = tuple(np.atleast_1d(size))
        n = int(np.prod(size))
        u = self.random_open(2 * n).reshape(n, 2)
        z = np.sqrt(-2.0 * np.log(u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])
        return z.reshape(size)

    def signs(self, n):
        top = self.next_u64(n) >> np.uint64(63)
        return 1.0 - 2.0 * top.astype(np.float64)
