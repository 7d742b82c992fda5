"""64-bit MurmurHash3 and the seeded hash family used for MinHash.

The band hash is the 64-bit variant of MurmurHash3 (x64 128-bit flavour,
first word).  The MinHash family reuses the same primitive to derive one
mixing parameter per function; per-shingle values are then produced by a
xor + finalizer construction that vectorizes well with numpy.
"""

from __future__ import annotations

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF
_C1 = 0x87C37B91114253D5
_C2 = 0x4CF5AD432745937F


def _rotl(x: int, r: int) -> int:
    return ((x << r) | (x >> (64 - r))) & _MASK


def _fmix(k: int) -> int:
    k ^= k >> 33
    k = (k * 0xFF51AFD7ED558CCD) & _MASK
    k ^= k >> 33
    k = (k * 0xC4CEB9FE1A85EC53) & _MASK
    k ^= k >> 33
    return k


def murmur3_x64_128(data: bytes, seed: int = 0) -> tuple[int, int]:
    """Reference MurmurHash3_x64_128 (Appleby), returned as (h1, h2)."""
    length = len(data)
    h1 = h2 = seed & _MASK
    nblocks = length // 16
    for i in range(nblocks):
        k1 = int.from_bytes(data[i * 16:i * 16 + 8], "little")
        k2 = int.from_bytes(data[i * 16 + 8:i * 16 + 16], "little")
        k1 = (k1 * _C1) & _MASK
        k1 = _rotl(k1, 31)
        k1 = (k1 * _C2) & _MASK
        h1 ^= k1
        h1 = _rotl(h1, 27)
        h1 = (h1 + h2) & _MASK
        h1 = (h1 * 5 + 0x52DCE729) & _MASK
        k2 = (k2 * _C2) & _MASK
        k2 = _rotl(k2, 33)
        k2 = (k2 * _C1) & _MASK
        h2 ^= k2
        h2 = _rotl(h2, 31)
        h2 = (h2 + h1) & _MASK
        h2 = (h2 * 5 + 0x38495AB5) & _MASK

    tail = data[nblocks * 16:]
    k1 = k2 = 0
    if len(tail) > 8:
        k2 = int.from_bytes(tail[8:], "little")
        k2 = (k2 * _C2) & _MASK
        k2 = _rotl(k2, 33)
        k2 = (k2 * _C1) & _MASK
        h2 ^= k2
    if tail:
        k1 = int.from_bytes(tail[:8], "little")
        k1 = (k1 * _C1) & _MASK
        k1 = _rotl(k1, 31)
        k1 = (k1 * _C2) & _MASK
        h1 ^= k1

    h1 ^= length
    h2 ^= length
    h1 = (h1 + h2) & _MASK
    h2 = (h2 + h1) & _MASK
    h1 = _fmix(h1)
    h2 = _fmix(h2)
    h1 = (h1 + h2) & _MASK
    h2 = (h2 + h1) & _MASK
    return h1, h2


def murmur64(data: bytes, seed: int = 0) -> int:
    """64-bit MurmurHash3: first word of the x64 128-bit hash."""
    return murmur3_x64_128(data, seed)[0]


# numpy-vectorized splitmix64 finalizer, used to expand one base hash per
# shingle into `count` per-function hash values.
_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_M1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_M2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = (x + _SM_GAMMA).astype(np.uint64)
    x ^= x >> np.uint64(30)
    x *= _SM_M1
    x ^= x >> np.uint64(27)
    x *= _SM_M2
    x ^= x >> np.uint64(31)
    return x


class HashFamily:
    """Deterministic family of `count` pairwise-distinct 64-bit hash functions.

    Per-function mixing constants are derived from (seed, index) via
    murmur64; applying function i to a shingle xors the shingle's murmur64
    base hash with constant i and runs the splitmix64 finalizer.
    Reconstructing from the same seed and count yields identical functions.
    """

    def __init__(self, seed: int, count: int):
        if count < 1:
            raise ValueError("hash family needs at least one function")
        self.seed = seed
        self.count = count
        params = [murmur64(i.to_bytes(8, "little"), seed) for i in range(count)]
        if len(set(params)) != count:
            raise ValueError(f"degenerate hash family for seed={seed}")
        self._params = np.array(params, dtype=np.uint64)

    def base_hash(self, shingle: str) -> int:
        return murmur64(shingle.encode("utf-8"), self.seed)

    def apply(self, base_hashes: np.ndarray) -> np.ndarray:
        """(n,) base hashes -> (count, n) matrix of per-function values."""
        mixed = base_hashes[np.newaxis, :] ^ self._params[:, np.newaxis]
        with np.errstate(over="ignore"):
            return _splitmix64(mixed)
