"""Counter-based splitmix64 generator.

Output ``i`` (1-based) of a stream with key ``k`` is
``mix(k + i * 0x9E3779B97F4A7C15)`` where ``mix`` is the splitmix64
finalizer. Uniform doubles take the top 53 bits; normals use Box-Muller
on consecutive pairs ``(u1, u2)`` with ``u1`` shifted into (0, 1].
Named sub-streams derive their key by FNV-1a hashing the label bytes
into the parent key, so every draw is a pure function of (seed, labels).
"""

from __future__ import annotations

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
MASK64 = (1 << 64) - 1
FNV_OFFSET = 14695981039346656037
FNV_PRIME = 1099511628211


def fnv1a64(data: bytes, start: int = FNV_OFFSET) -> int:
    h = start
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


def mix64(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def derive_seed(seed: int, *labels) -> int:
    key = int(seed) & MASK64
    for label in labels:
        key = fnv1a64(str(label).encode("utf-8"), start=key ^ FNV_OFFSET)
        key = int(mix64(np.uint64(key)))
    return key


class SplitMix:
    """Stateful view over one counter stream."""

    def __init__(self, seed: int, *labels):
        self.key = derive_seed(seed, *labels) if labels else int(seed) & MASK64
        self.counter = 0

    def child(self, *labels) -> "SplitMix":
        return SplitMix(self.key, *labels)

    def u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return mix64(np.uint64(self.key) + idx * GAMMA)

    def uniform(self, size) -> np.ndarray:
        n = int(np.prod(size))
        u = (self.u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return u.reshape(size)

    def normal(self, size, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        n = int(np.prod(size))
        pairs = (n + 1) // 2
        raw = (self.u64(2 * pairs) >> np.uint64(11)).astype(np.float64)
        u1 = (raw[0::2] + 1.0) * 2.0**-53
        u2 = raw[1::2] * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        return (mean + std * z[:n]).reshape(size)

    def integers(self, low: int, high: int, size) -> np.ndarray:
        span = high - low
        return low + np.floor(self.uniform(size) * span).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")
