"""Deterministic, purpose-keyed random streams.

Every random draw in the package comes from a Philox counter-based
generator keyed by (seed, *purpose words): e.g. ("init",),
("shuffle", epoch), ("noise", step), ("gen", context_index, sample).
Streams are independent of execution order and of each other, which is
what makes training resumable bit-exactly: the stream for step k is the
same whether the run paused at step k-1 or never paused.

Key derivation: fold the seed and each word through splitmix64; string
words are first hashed with blake2b so keys don't depend on python's
per-process hash randomization. Gaussian draws use the Box-Muller
transform over Philox uniforms (documented so that "normal draw #i of
stream s" is pinned by this package, not by numpy internals).
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _word_to_int(w) -> int:
    if isinstance(w, (int, np.integer)):
        return int(w) & _MASK64
    if isinstance(w, str):
        return int.from_bytes(hashlib.blake2b(w.encode("utf-8"), digest_size=8).digest(), "little")
    raise TypeError(f"stream key words must be int or str, got {type(w)!r}")


def derive_key(seed: int, *words) -> tuple[int, int]:
    h = _splitmix64(int(seed) & _MASK64)
    for w in words:
        h = _splitmix64(h ^ _word_to_int(w))
    return h, _splitmix64(h)


class Stream:
    """One derived random stream with the draw primitives used here."""

    def __init__(self, seed: int, *words):
        k1, k2 = derive_key(seed, *words)
        self._gen = np.random.Generator(np.random.Philox(key=np.array([k1, k2], dtype=np.uint64)))

    def uniform(self, low: float, high: float, size, dtype=np.float64) -> np.ndarray:
        u = self._gen.random(size=size)
        return (low + (high - low) * u).astype(dtype)

    def normal(self, size, dtype=np.float64) -> np.ndarray:
        """Standard normals via Box-Muller on Philox uniforms."""
        n = int(np.prod(size)) if size else 1
        m = (n + 1) // 2
        u1 = 1.0 - self._gen.random(size=m)  # in (0, 1]: log is finite
        u2 = self._gen.random(size=m)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(size).astype(dtype)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def categorical(self, probs: np.ndarray) -> int:
        """Sample an index from a probability vector by inverse CDF."""
        cdf = np.cumsum(probs.astype(np.float64))
        cdf /= cdf[-1]
        u = self._gen.random()
        return int(np.searchsorted(cdf, u, side="right"))


def stream(seed: int, *words) -> Stream:
    return Stream(seed, *words)
