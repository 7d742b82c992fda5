"""MinHash signatures, band hashing, blocking index and S-curve analytics."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from io import BufferedIOBase
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .hashing import HashFamily, murmur64

MAGIC = b"RLBK"
FORMAT_VERSION = 1

DEFAULT_SEED = 0x5EED_1E57
DEFAULT_PRESETS = ((4, 10), (5, 18), (6, 30))


class EmptyShingleSet(ValueError):
    pass


class SignatureLengthMismatch(ValueError):
    pass


class DuplicateRecordId(ValueError):
    pass


class NoFeasibleConfig(ValueError):
    pass


class VersionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class BandConfig:
    """MinHash layout: `rows` hashes per band, `bands` bands."""

    rows: int
    bands: int

    def __post_init__(self):
        if self.rows < 1 or self.bands < 1:
            raise ValueError("rows and bands must be >= 1")

    @property
    def num_hashes(self) -> int:
        return self.rows * self.bands

    def __str__(self) -> str:
        return f"{self.rows}/{self.bands}"

    @classmethod
    def parse(cls, text: str) -> "BandConfig":
        r, b = text.split("/")
        return cls(int(r), int(b))


def scurve_probability(s: float, cfg: BandConfig) -> float:
    """Probability that two sets with Jaccard similarity s share a band key.

    Closed form 1 - (1 - s^r)^b.
    """
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"similarity {s} outside [0, 1]")
    return 1.0 - (1.0 - s ** cfg.rows) ** cfg.bands


def choose_band_config(
    min_similarity: float,
    min_probability: float,
    candidates: Sequence[BandConfig],
) -> BandConfig:
    """Cheapest config (fewest total hashes) meeting the probability floor."""
    if not candidates:
        raise ValueError("candidate list is empty")
    feasible = [
        c for c in candidates
        if scurve_probability(min_similarity, c) >= min_probability
    ]
    if not feasible:
        raise NoFeasibleConfig(
            f"no config reaches P >= {min_probability} at s = {min_similarity}"
        )
    return min(feasible, key=lambda c: (c.num_hashes, c.rows))


def minhash_signature(shingles: Iterable[str], family: HashFamily) -> np.ndarray:
    """Per-function minima over the shingle set; (count,) uint64 array."""
    shingles = list(shingles)
    if not shingles:
        raise EmptyShingleSet("cannot minhash an empty shingle set")
    bases = np.fromiter(
        (family.base_hash(s) for s in shingles), dtype=np.uint64, count=len(shingles)
    )
    return family.apply(bases).min(axis=1)


def band_keys(sig: np.ndarray, cfg: BandConfig) -> list[int]:
    """One 64-bit Murmurhash3 key per band, salted with the band index.

    The salt keeps identical row content in different bands from colliding
    in the single flat key -> postings map.
    """
    if len(sig) != cfg.num_hashes:
        raise SignatureLengthMismatch(
            f"signature length {len(sig)} != {cfg.rows}x{cfg.bands}"
        )
    keys = []
    for j in range(cfg.bands):
        chunk = sig[j * cfg.rows:(j + 1) * cfg.rows]
        keys.append(murmur64(chunk.astype("<u8").tobytes(), seed=j))
    return keys


class BlockingIndex:
    """Map from 64-bit band key to the ascending list of record ids."""

    def __init__(self, config: BandConfig, seed: int = DEFAULT_SEED):
        self.config = config
        self.seed = seed
        self._postings: dict[int, list[int]] = {}
        self._inserted: set[int] = set()

    def __len__(self) -> int:
        return len(self._postings)

    @property
    def record_count(self) -> int:
        return len(self._inserted)

    def insert(self, record_id: int, keys: Sequence[int]) -> None:
        if record_id in self._inserted:
            raise DuplicateRecordId(f"record {record_id} already indexed")
        self._inserted.add(record_id)
        for key in keys:
            lst = self._postings.setdefault(key, [])
            if not lst or lst[-1] < record_id:
                lst.append(record_id)
            elif lst[-1] != record_id:
                # out-of-order insert; keep the list sorted
                import bisect
                bisect.insort(lst, record_id)

    def postings(self, key: int) -> list[int]:
        return self._postings.get(key, [])

    def candidates(self, keys: Sequence[int]) -> list[int]:
        """Sorted, deduplicated union of the posting lists."""
        out: set[int] = set()
        for key in keys:
            out.update(self._postings.get(key, ()))
        return sorted(out)

    def key_for_record_count(self) -> dict[int, int]:
        return {k: len(v) for k, v in self._postings.items()}

    # -- persistence ------------------------------------------------------
    # Layout: magic, u16 version, u64 seed, u16 rows, u16 bands, u64 record
    # count, u64 key count, then per ascending key: u64 LE key, varint
    # postings length, delta-encoded ascending ids as varints.

    def write(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            self._write_stream(fh)

    def _write_stream(self, fh: BufferedIOBase) -> None:
        fh.write(MAGIC)
        fh.write(struct.pack("<HQHHQQ", FORMAT_VERSION, self.seed,
                             self.config.rows, self.config.bands,
                             self.record_count, len(self._postings)))
        for key in sorted(self._postings):
            ids = self._postings[key]
            fh.write(struct.pack("<Q", key))
            fh.write(_varint(len(ids)))
            prev = 0
            for rid in ids:
                fh.write(_varint(rid - prev))
                prev = rid
            # delta of first id is the id itself (prev starts at 0)

    @classmethod
    def load(cls, path: str | Path) -> "BlockingIndex":
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:4] != MAGIC:
            raise VersionMismatch("not a blocking index file")
        version, seed, rows, bands, nrec, nkeys = struct.unpack_from("<HQHHQQ", data, 4)
        if version != FORMAT_VERSION:
            raise VersionMismatch(f"unsupported blocking index version {version}")
        idx = cls(BandConfig(rows, bands), seed)
        pos = 4 + struct.calcsize("<HQHHQQ")
        for _ in range(nkeys):
            key = struct.unpack_from("<Q", data, pos)[0]
            pos += 8
            count, pos = _read_varint(data, pos)
            ids = []
            acc = 0
            for _ in range(count):
                delta, pos = _read_varint(data, pos)
                acc += delta
                ids.append(acc)
            idx._postings[key] = ids
        idx._inserted = set(range(nrec))
        return idx


def _varint(value: int) -> bytes:
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def _read_varint(data: bytes, pos: int) -> tuple[int, int]:
    shift = 0
    value = 0
    while True:
        byte = data[pos]
        pos += 1
        value |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return value, pos
        shift += 7
