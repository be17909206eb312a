"""Counter-based portable pseudo-random number generator.

Everything stochastic in this package (waveform synthesis, corpus layout,
weight init, data shuffling) runs off this generator so that manifests and
checkpoints reproduce bit-exactly across runs, platforms, and language
ports.  The algorithm is SplitMix64: output ``i`` of a stream with seed
``s`` is ``mix64(s + (i + 1) * GOLDEN)`` where ``mix64`` is the standard
finalizer (xor-shift 30 / mul 0xBF58476D1CE4E5B9 / xor-shift 27 /
mul 0x94D049BB133111EB / xor-shift 31), all arithmetic mod 2**64.

Floats in [0, 1) take the top 53 bits; normals use Box-Muller on pairs of
uniforms; bounded ints use rejection sampling so they are exactly uniform.
"""

from __future__ import annotations

from typing import Iterable, Sequence, TypeVar

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
_MASK64 = 0xFFFFFFFFFFFFFFFF
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

T = TypeVar("T")


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a 64-bit integer."""
    z &= _MASK64
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def fnv1a64(data: bytes) -> int:
    """FNV-1a hash of a byte string, used to fold labels into stream seeds."""
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


class Stream:
    """One deterministic random stream.

    A stream is (seed, counter).  ``derive`` hashes labels into a fresh
    seed, giving statistically independent substreams whose values do not
    depend on how much the parent stream has been consumed.
    """

    def __init__(self, seed: int, counter: int = 0) -> None:
        self._seed = seed & _MASK64
        self._counter = counter

    @property
    def seed(self) -> int:
        return self._seed

    def derive(self, *labels: object) -> "Stream":
        """Fork a child stream keyed by the given labels."""
        h = self._seed
        for label in labels:
            h = mix64(h ^ fnv1a64(str(label).encode("utf-8")))
        return Stream(h)

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        return _mix64_array(np.uint64(self._seed) + idx * np.uint64(GOLDEN))

    def raw64(self) -> int:
        """Next raw 64-bit output."""
        return int(self._raw(1)[0])

    def uniform(self, shape: int | tuple[int, ...] = ()) -> np.ndarray | float:
        """Uniform float64 samples in [0, 1)."""
        n = int(np.prod(shape)) if shape != () else 1
        vals = (self._raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        if shape == ():
            return float(vals[0])
        return vals.reshape(shape)

    def normal(self, shape: int | tuple[int, ...] = (), scale: float = 1.0) -> np.ndarray | float:
        """Standard normal samples via Box-Muller, scaled by ``scale``."""
        n = int(np.prod(shape)) if shape != () else 1
        m = (n + 1) // 2
        raw = self._raw(2 * m)
        # u1 in (0, 1] so log() is finite; u2 in [0, 1)
        u1 = ((raw[:m] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (raw[m:] >> np.uint64(11)).astype(np.float64) * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        vals = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n] * scale
        if shape == ():
            return float(vals[0])
        return vals.reshape(shape)

    def randint(self, bound: int) -> int:
        """Uniform integer in [0, bound) via rejection sampling."""
        if bound <= 0:
            raise ValueError(f"bound must be positive, got {bound}")
        limit = (2**64 // bound) * bound
        while True:
            v = self.raw64()
            if v < limit:
                return v % bound

    def choice(self, items: Sequence[T]) -> T:
        if not items:
            raise ValueError("cannot choose from an empty sequence")
        return items[self.randint(len(items))]

    def sample(self, items: Sequence[T], k: int) -> list[T]:
        """k distinct items, uniformly without replacement (partial Fisher-Yates)."""
        if k < 0 or k > len(items):
            raise ValueError(f"cannot sample {k} items from {len(items)}")
        pool = list(items)
        for i in range(k):
            j = i + self.randint(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def shuffle(self, items: Iterable[T]) -> list[T]:
        """Return a new uniformly shuffled list."""
        pool = list(items)
        return self.sample(pool, len(pool))
