"""Seeded random streams and hashing.

Every random quantity in the package (initial weights, noise, shuffles,
label draws, splits) comes from an :class:`RngStream` derived from one
64-bit seed and a short purpose tag.  Streams are lane-parallel
xoshiro256** generators seeded through a splitmix64 chain, so large noise
blocks can be produced with vectorised numpy arithmetic while the output
sequence stays a pure function of ``(seed, tag)``.
"""
from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

# Number of independent xoshiro lanes stepped together.  Changing it
# changes every output sequence.
LANES = 1024

_U64 = np.uint64
_TWO_PI = 2.0 * np.pi
_INV_2_53 = 1.0 / float(1 << 53)


def mix64(z: int) -> int:
    """splitmix64 finalizer: full-avalanche bijection on 64-bit integers."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _tag_hash(tag: str) -> int:
    return int.from_bytes(hashlib.sha256(tag.encode("ascii")).digest()[:8], "little")


def _rotl(x: np.ndarray, k: int) -> np.ndarray:
    return (x << _U64(k)) | (x >> _U64(64 - k))


class RngStream:
    """A deterministic stream of 64-bit outputs.

    Outputs are emitted in blocks of ``LANES`` values (one per lane per
    round); a partially consumed block is buffered, so the sequence does not
    depend on how requests are chunked.  Streams are single-owner: derive a
    fresh one per task instead of sharing.
    """

    def __init__(self, seed: int, domain_tag: str):
        if not domain_tag or not domain_tag.isascii():
            raise ValueError("domain_tag must be a nonempty ASCII string")
        self.seed = int(seed) & MASK64
        self.domain_tag = domain_tag
        key = mix64(mix64(self.seed) ^ _tag_hash(domain_tag))
        words = []
        x = key
        for _ in range(4 * LANES):
            x = (x + GOLDEN_GAMMA) & MASK64
            words.append(mix64(x))
        state = np.array(words, dtype=_U64).reshape(4, LANES)
        # an all-zero xoshiro state is a fixed point
        dead = ~state.any(axis=0)
        state[0, dead] = _U64(GOLDEN_GAMMA)
        self._s = [state[i].copy() for i in range(4)]
        self._buf = np.empty(0, dtype=_U64)
        self._pos = 0

    def __repr__(self):
        return f"RngStream(seed={self.seed}, domain_tag={self.domain_tag!r})"

    def _rounds(self, rounds: int) -> np.ndarray:
        s0, s1, s2, s3 = self._s
        out = np.empty((rounds, LANES), dtype=_U64)
        five, nine, seventeen = _U64(5), _U64(9), _U64(17)
        for r in range(rounds):
            out[r] = _rotl(s1 * five, 7) * nine
            t = s1 << seventeen
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return out.reshape(-1)

    def next_u64(self, n: int) -> np.ndarray:
        """Next ``n`` raw outputs as a uint64 array."""
        n = int(n)
        if n < 0:
            raise ValueError("n must be nonnegative")
        avail = len(self._buf) - self._pos
        if n <= avail:
            out = self._buf[self._pos:self._pos + n].copy()
            self._pos += n
            return out
        head = self._buf[self._pos:]
        need = n - avail
        rounds = -(-need // LANES)
        fresh = self._rounds(rounds)
        out = np.concatenate([head, fresh[:need]])
        self._buf = fresh
        self._pos = need
        return out

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1) built from the top 53 bits."""
        return (self.next_u64(n) >> _U64(11)).astype(np.float64) * _INV_2_53

    def uniform_open(self, n: int) -> np.ndarray:
        """``n`` doubles in (0, 1]; safe as a logarithm argument."""
        return ((self.next_u64(n) >> _U64(11)).astype(np.float64) + 1.0) * _INV_2_53


def derive_stream(seed: int, domain_tag: str) -> RngStream:
    return RngStream(seed, domain_tag)


def gaussians(stream: RngStream, sigma: float, n: int) -> np.ndarray:
    """``n`` draws from N(0, sigma^2) by Box-Muller.

    Each pair of outputs consumes exactly two raw values (radius, angle); an
    odd ``n`` discards the sine half of the last pair.  ``sigma == 0``
    returns zeros without touching the stream.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    n = int(n)
    if sigma == 0 or n == 0:
        return np.zeros(n, dtype=np.float64)
    pairs = -(-n // 2)
    raw = stream.next_u64(2 * pairs) >> _U64(11)
    u1 = (raw[0::2].astype(np.float64) + 1.0) * _INV_2_53
    u2 = raw[1::2].astype(np.float64) * _INV_2_53
    radius = np.sqrt(-2.0 * np.log(u1))
    theta = _TWO_PI * u2
    z = np.empty(2 * pairs, dtype=np.float64)
    z[0::2] = radius * np.cos(theta)
    z[1::2] = radius * np.sin(theta)
    return sigma * z[:n]


def gaussian(stream: RngStream, sigma: float) -> float:
    """One draw from N(0, sigma^2); exactly 0.0 when sigma is 0."""
    if sigma == 0:
        return 0.0
    return float(gaussians(stream, sigma, 1)[0])


def randbelow(stream: RngStream, bounds) -> list[int]:
    """Integers ``j_i`` in ``[0, bounds[i])`` by 128-bit multiply-shift."""
    bounds = [int(b) for b in bounds]
    raw = stream.next_u64(len(bounds)).tolist()
    return [(r * b) >> 64 for r, b in zip(raw, bounds)]


def permutation(stream: RngStream, n: int) -> np.ndarray:
    """Fisher-Yates shuffle of ``range(n)``."""
    n = int(n)
    if n < 0:
        raise ValueError("n must be nonnegative")
    perm = list(range(n))
    if n < 2:
        return np.array(perm, dtype=np.int64)
    js = randbelow(stream, range(n, 1, -1))
    for i, j in zip(range(n - 1, 0, -1), js):
        perm[i], perm[j] = perm[j], perm[i]
    return np.array(perm, dtype=np.int64)


def choose(stream: RngStream, population, k: int) -> list:
    """Uniform k-subset of ``population`` as a list in draw order (partial Fisher-Yates)."""
    pool = list(population)
    k = int(k)
    if not 0 <= k <= len(pool):
        raise ValueError(f"cannot choose {k} of {len(pool)}")
    n = len(pool)
    js = randbelow(stream, range(n, n - k, -1))
    for i, j in enumerate(js):
        j += i
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:k]


def digest(data: bytes) -> bytes:
    """SHA-256 of ``data``."""
    return hashlib.sha256(data).digest()
