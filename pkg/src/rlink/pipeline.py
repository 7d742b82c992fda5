"""Offline preprocessing (clean -> short names -> entity DB -> blocking DB)
and the runtime linkage pipeline (keys -> candidates -> scoring -> ranking).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Optional, Sequence

import yaml

from . import blocking as blk
from . import scoring as sc
from . import shortname as sn
from .blocking import BandConfig, BlockingIndex
from .entity_store import DatasetSchema, EntityStore, IngestStats, QueryRecord, Record
from .hashing import HashFamily
from .textnorm import LegalEntityLexicon, clean_blocking, shingle_bigrams

log = logging.getLogger(__name__)


class EmptyQueryName(ValueError):
    pass


@dataclass
class LinkerConfig:
    """Run configuration referencing all data files and tunables."""

    entity_db: str = "entities.db"
    blocking_db: str = "blocking.db"
    gazetteer: Optional[str] = None
    lexicon: Optional[str] = None          # None -> bundled snapshot
    shortname_model: Optional[str] = None
    frequency_table: Optional[str] = None
    rows: int = 6
    bands: int = 30
    seed: int = blk.DEFAULT_SEED
    strategy: str = "rls"
    threshold: float = 0.7
    top_n: int = 10
    workers: int = 4
    scoring: sc.ScoringConfig = field(default_factory=sc.ScoringConfig)

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must be in [0, 1]")
        if self.top_n < 1:
            raise ValueError("top_n must be >= 1")

    @property
    def band_config(self) -> BandConfig:
        return BandConfig(self.rows, self.bands)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "LinkerConfig":
        data = dict(data)
        scoring = data.pop("scoring", None)
        cfg = cls(**data)
        if scoring:
            cfg.scoring = sc.ScoringConfig(**scoring)
        return cfg

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def load(cls, path: str | Path) -> "LinkerConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh) or {})

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class MatchResult:
    record_id: int
    score: float
    sub_scores: dict
    record: Record

    def to_dict(self) -> dict:
        rec = {k: v for k, v in (
            ("name", self.record.name),
            ("shortName", self.record.short_name),
            ("street", self.record.street),
            ("city", self.record.city),
            ("postal", self.record.postal),
            ("country", self.record.country),
            ("sic", self.record.sic),
        ) if v is not None}
        return {
            "recordId": self.record_id,
            "score": round(self.score, 10),
            "subScores": {k: round(v, 10) for k, v in sorted(self.sub_scores.items())},
            "record": rec,
        }


# -- preprocessing --------------------------------------------------------


def preprocess(
    source: IO[str],
    schema: DatasetSchema,
    config: LinkerConfig,
    out_dir: str | Path,
    delimiter: str = ",",
) -> dict:
    """Run the full offline pipeline; returns per-stage stats.

    Outputs are written to temp paths and renamed on success, so a failed
    run leaves no partial databases behind.  Deterministic under a fixed
    seed: running twice yields byte-identical files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entity_path = out_dir / config.entity_db
    blocking_path = out_dir / config.blocking_db
    lex = _load_lexicon(config)
    stats: dict = {}

    t0 = time.perf_counter()
    store, ingest_stats = EntityStore.ingest(source, schema, delimiter)
    stats["ingest"] = dataclasses.asdict(ingest_stats)
    stats["ingest"]["seconds"] = round(time.perf_counter() - t0, 3)

    t0 = time.perf_counter()
    if config.shortname_model and config.frequency_table:
        model = sn.ShortNameModel.load(config.shortname_model)
        freq = sn.FrequencyTable.load(config.frequency_table)
        records = [
            dataclasses.replace(r, short_name=sn.predict(r.name, model, freq))
            for r in store
        ]
        store = EntityStore(records)
        stats["short_names"] = {"predicted": len(records)}
    else:
        stats["short_names"] = {"skipped": True}
    stats["short_names"]["seconds"] = round(time.perf_counter() - t0, 3)

    t0 = time.perf_counter()
    tmp_entity = entity_path.with_suffix(".tmp")
    try:
        store.write(tmp_entity)
        os.replace(tmp_entity, entity_path)
    except BaseException:
        tmp_entity.unlink(missing_ok=True)
        raise
    stats["entity_db"] = {
        "records": len(store),
        "bytes": entity_path.stat().st_size,
        "seconds": round(time.perf_counter() - t0, 3),
    }

    t0 = time.perf_counter()
    family = HashFamily(config.seed, config.band_config.num_hashes)
    index = BlockingIndex(config.band_config, config.seed)
    empty_skipped = 0
    for record in store:
        shingles = shingle_bigrams(clean_blocking(record.name, lex))
        if not shingles:
            empty_skipped += 1
            log.warning("record %d has empty blocking features; skipped", record.id)
            continue
        sig = blk.minhash_signature(shingles, family)
        index.insert(record.id, blk.band_keys(sig, config.band_config))
    tmp_blocking = blocking_path.with_suffix(".tmp")
    try:
        index.write(tmp_blocking)
        os.replace(tmp_blocking, blocking_path)
    except BaseException:
        tmp_blocking.unlink(missing_ok=True)
        raise
    stats["blocking_db"] = {
        "indexed": index.record_count,
        "empty_skipped": empty_skipped,
        "distinct_keys": len(index),
        "bytes": blocking_path.stat().st_size,
        "seconds": round(time.perf_counter() - t0, 3),
    }
    return stats


def _load_lexicon(config: LinkerConfig) -> LegalEntityLexicon:
    if config.lexicon:
        return LegalEntityLexicon.from_file(config.lexicon)
    return LegalEntityLexicon.bundled()


# -- runtime --------------------------------------------------------------


class Linker:
    """Loaded linkage state: entity store, blocking index, trie, model.

    Immutable after load; link_one / link_batch are safe to call from any
    number of threads.
    """

    def __init__(self, config: LinkerConfig, base_dir: str | Path = "."):
        base = Path(base_dir)
        self.config = config
        self.store = EntityStore.load(base / config.entity_db)
        self.index = BlockingIndex.load(base / config.blocking_db)
        if self.index.config != config.band_config:
            raise ValueError(
                f"blocking DB band config {self.index.config} does not match "
                f"run config {config.band_config}")
        self.lex = _load_lexicon(config)
        self.trie = (sc.CityTrie.from_file(config.gazetteer)
                     if config.gazetteer else None)
        self.model = (sn.ShortNameModel.load(config.shortname_model)
                      if config.shortname_model else None)
        self.freq = (sn.FrequencyTable.load(config.frequency_table)
                     if config.frequency_table else None)
        self.family = HashFamily(config.seed, config.band_config.num_hashes)
        self.strategy = sc.Strategy(config.strategy)

    def _candidate_ids(self, query: QueryRecord) -> list[int]:
        keys: list[int] = []
        for name in (query.name, *query.names_alt):
            shingles = shingle_bigrams(clean_blocking(name, self.lex))
            if not shingles:
                continue
            sig = blk.minhash_signature(shingles, self.family)
            keys.extend(blk.band_keys(sig, self.index.config))
        return self.index.candidates(keys)

    def link_one(
        self,
        query: QueryRecord,
        threshold: Optional[float] = None,
        top_n: Optional[int] = None,
        strategy: Optional[sc.Strategy] = None,
    ) -> tuple[list[MatchResult], int]:
        """Rank candidate records; returns (results, comparisons count)."""
        threshold = self.config.threshold if threshold is None else threshold
        top_n = self.config.top_n if top_n is None else top_n
        strategy = strategy or self.strategy

        query_short = None
        if self.model is not None and self.freq is not None:
            query_short = sn.predict(query.name, self.model, self.freq)
        tree = sc.build_scoring_tree(
            query, strategy, self.config.scoring, lex=self.lex, trie=self.trie,
            query_short=query_short)

        candidates = self._candidate_ids(query)
        scored = []
        for rid in candidates:
            record = self.store.get_record(rid)
            score, subs = tree.evaluate(record)
            if score >= threshold:
                scored.append(MatchResult(rid, score, subs, record))
        scored.sort(key=lambda m: (-m.score, m.record_id))
        return scored[:top_n], len(candidates)

    def link_batch(
        self,
        queries: Sequence[QueryRecord],
        workers: Optional[int] = None,
        **kwargs,
    ) -> list:
        """Positionally aligned results; per-query errors are reported
        in-position as exceptions without failing the batch.  Output is
        identical regardless of worker count."""
        workers = workers or self.config.workers

        def run(q):
            try:
                return self.link_one(q, **kwargs)
            except Exception as exc:  # noqa: BLE001 - reported in-position
                return exc

        if workers <= 1 or len(queries) <= 1:
            return [run(q) for q in queries]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, queries))
