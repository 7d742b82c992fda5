"""Reference-dataset ingest and the versioned binary entity database.

The store keeps all records in memory (load-once, read-only afterwards)
and serves O(1) retrieval by dense id.
"""

from __future__ import annotations

import csv
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Optional

from .textnorm import CleanText, clean_light

MAGIC = b"RLED"
FORMAT_VERSION = 1


class SchemaMismatch(ValueError):
    pass


class IdOutOfRange(IndexError):
    pass


class VersionMismatch(ValueError):
    pass


class ChecksumMismatch(ValueError):
    pass


ATTRIBUTES = ("name", "short_name", "street", "city", "postal", "country", "sic")


@dataclass(frozen=True)
class Record:
    """A company entity with pre-cleaned scoring attributes."""

    id: int
    name: str
    short_name: Optional[str] = None
    street: Optional[str] = None
    city: Optional[str] = None
    postal: Optional[str] = None
    country: Optional[str] = None
    sic: Optional[str] = None
    clean_name: CleanText = CleanText("")
    clean_street: CleanText = CleanText("")
    clean_city: CleanText = CleanText("")

    @classmethod
    def build(cls, id: int, name: str, **attrs) -> "Record":
        """Construct a record, populating the clean caches."""
        return cls(
            id=id,
            name=name,
            clean_name=clean_light(name),
            clean_street=clean_light(attrs.get("street") or ""),
            clean_city=clean_light(attrs.get("city") or ""),
            **{k: attrs.get(k) for k in ATTRIBUTES if k != "name"},
        )


@dataclass(frozen=True)
class Address:
    street: Optional[str] = None
    city: Optional[str] = None
    postal: Optional[str] = None
    country: Optional[str] = None

    def is_empty(self) -> bool:
        return not (self.street or self.city or self.postal or self.country)


@dataclass(frozen=True)
class QueryRecord:
    """An incoming query: name required, everything else optional/repeated."""

    name: str
    names_alt: tuple[str, ...] = ()
    addresses: tuple[Address, ...] = ()
    sics: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.name or not clean_light(self.name).text:
            raise ValueError("query name must be non-empty")


@dataclass(frozen=True)
class DatasetSchema:
    """Maps source column names to canonical record attributes."""

    columns: dict  # column name -> attribute in ATTRIBUTES

    def __post_init__(self):
        bad = set(self.columns.values()) - set(ATTRIBUTES)
        if bad:
            raise SchemaMismatch(f"unknown attributes in schema: {sorted(bad)}")
        if list(self.columns.values()).count("name") != 1:
            raise SchemaMismatch("schema must map exactly one column to 'name'")


@dataclass
class IngestStats:
    total_rows: int = 0
    ingested: int = 0
    dropped_empty_name: int = 0
    malformed: int = 0


class EntityStore:
    """In-memory record collection with dense ids 0..n-1."""

    def __init__(self, records: list[Record]):
        self._records = records

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    def get_record(self, record_id: int) -> Record:
        if not 0 <= record_id < len(self._records):
            raise IdOutOfRange(f"record id {record_id} not in [0, {len(self._records)})")
        return self._records[record_id]

    # -- ingest -----------------------------------------------------------

    @classmethod
    def ingest(
        cls,
        source: IO[str],
        schema: DatasetSchema,
        delimiter: str = ",",
    ) -> tuple["EntityStore", IngestStats]:
        """Read delimited text with a header row into a store.

        Rows with an empty name are dropped and counted; malformed rows
        (wrong field count) are skipped and counted.
        """
        reader = csv.reader(source, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatch("source has no header row")
        missing = [c for c in schema.columns if c not in header]
        if missing:
            raise SchemaMismatch(f"mapped columns missing from header: {missing}")
        col_idx = {attr: header.index(col) for col, attr in schema.columns.items()}

        stats = IngestStats()
        records: list[Record] = []
        for row in reader:
            stats.total_rows += 1
            if len(row) != len(header):
                stats.malformed += 1
                continue
            values = {attr: row[i].strip() or None for attr, i in col_idx.items()}
            name = values.pop("name", None)
            if not name or not clean_light(name).text:
                stats.dropped_empty_name += 1
                continue
            records.append(Record.build(id=len(records), name=name, **values))
        stats.ingested = len(records)
        return cls(records), stats

    # -- persistence ------------------------------------------------------
    # Header: magic, u16 version, u64 count, u32 crc32(body).
    # Body: fixed-width u64 offset table (one per record, relative to the
    # payload start) followed by the payload arena of length-prefixed
    # UTF-8 fields.

    _FIELDS = ("name", "short_name", "street", "city", "postal", "country",
               "sic", "clean_name", "clean_street", "clean_city")

    def write(self, path: str | Path) -> None:
        payloads = []
        for rec in self._records:
            buf = bytearray()
            for f in self._FIELDS:
                val = getattr(rec, f)
                if isinstance(val, CleanText):
                    val = val.text
                data = (val or "").encode("utf-8")
                buf += _varint(len(data)) + data
            payloads.append(bytes(buf))
        offsets = []
        pos = 0
        for p in payloads:
            offsets.append(pos)
            pos += len(p)
        body = struct.pack(f"<{len(offsets)}Q", *offsets) + b"".join(payloads)
        header = MAGIC + struct.pack("<HQI", FORMAT_VERSION, len(self._records),
                                     zlib.crc32(body))
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(body)

    @classmethod
    def load(cls, path: str | Path) -> "EntityStore":
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:4] != MAGIC:
            raise VersionMismatch("not an entity database file")
        version, count, crc = struct.unpack_from("<HQI", data, 4)
        if version != FORMAT_VERSION:
            raise VersionMismatch(f"unsupported entity db version {version}")
        body = data[4 + struct.calcsize("<HQI"):]
        if zlib.crc32(body) != crc:
            raise ChecksumMismatch("entity database checksum mismatch")
        table_size = count * 8
        offsets = struct.unpack_from(f"<{count}Q", body, 0)
        payload = body[table_size:]
        records = []
        for rid in range(count):
            pos = offsets[rid]
            values = []
            for _ in cls._FIELDS:
                length, pos = _read_varint(payload, pos)
                values.append(payload[pos:pos + length].decode("utf-8"))
                pos += length
            (name, short_name, street, city, postal, country, sic,
             c_name, c_street, c_city) = values
            records.append(Record(
                id=rid,
                name=name,
                short_name=short_name or None,
                street=street or None,
                city=city or None,
                postal=postal or None,
                country=country or None,
                sic=sic or None,
                clean_name=CleanText.from_text(c_name),
                clean_street=CleanText.from_text(c_street),
                clean_city=CleanText.from_text(c_city),
            ))
        return cls(records)


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
