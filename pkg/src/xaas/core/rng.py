"""Portable deterministic random number generation.

Reproducibility across runs, machines, and implementation languages is a
hard requirement, so the generator is pinned to published algorithms
rather than whatever the host library ships:

* stream: xoshiro256++ (Blackman & Vigna, 2019),
* seeding: the 64-bit seed is expanded into the four state words with
  four successive outputs of splitmix64,
* unit doubles: ``(raw >> 11) * 2**-53`` in ``[0, 1)``,
* standard normals: Box-Muller pairs.  Pair ``i`` consumes two unit
  draws ``u1, u2`` (in that order), with ``u1`` shifted to ``(0, 1]``
  as ``((raw >> 11) + 1) * 2**-53`` so ``log(u1)`` is finite, and emits
  ``r*cos(2*pi*u2)`` then ``r*sin(2*pi*u2)`` where ``r = sqrt(-2*ln(u1))``.
  ``normals(n)`` generates ``ceil(n/2)`` pairs and truncates.

Derived seeds (per dataset item, etc.) come from SHA-256 over a domain
tag so any implementation can reproduce them; see :func:`derive_seed`.

The golden-value tests freeze the first draws for a handful of seeds;
those numbers are part of the compatibility contract.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_U53 = float(2**-53)


def _splitmix64_next(state: int) -> tuple[int, int]:
    state = (state + _SPLITMIX_GAMMA) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class PortableRng:
    """xoshiro256++ stream with splitmix64 seeding.

    Instances are cheap; stochastic operations take one as an argument
    instead of reaching for global state.
    """

    def __init__(self, seed: int):
        state = seed & _MASK64
        words = []
        for _ in range(4):
            state, word = _splitmix64_next(state)
            words.append(word)
        if not any(words):  # all-zero state would lock the generator
            words[0] = 1
        self._s = words
        self.seed = seed & _MASK64

    def raw64(self) -> int:
        """Next 64-bit output word."""
        s = self._s
        result = (_rotl((s[0] + s[3]) & _MASK64, 23) + s[0]) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform(self) -> float:
        """One double in [0, 1)."""
        return (self.raw64() >> 11) * _U53

    def uniforms(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1)."""
        raw = self._raw_array(n)
        return (raw >> np.uint64(11)).astype(np.float64) * _U53

    def normals(self, n: int) -> np.ndarray:
        """``n`` standard normal draws (Box-Muller, documented order)."""
        if n == 0:
            return np.empty(0, dtype=np.float64)
        pairs = (n + 1) // 2
        raw = self._raw_array(2 * pairs)
        shifted = (raw >> np.uint64(11)).astype(np.float64)
        u1 = (shifted[0::2] + 1.0) * _U53  # (0, 1]
        u2 = shifted[1::2] * _U53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def _raw_array(self, n: int) -> np.ndarray:
        raw = self.raw64
        return np.array([raw() for _ in range(n)], dtype=np.uint64)


def derive_seed(*parts: object) -> int:
    """Derive a child seed from hashable parts, stable across languages.

    Computed as the first 8 bytes (big-endian) of
    ``SHA-256("xaas-seed:" + ":".join(str(part)...))``.
    """
    tag = "xaas-seed:" + ":".join(str(p) for p in parts)
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
