"""Ground-truth evaluation, strategy comparison, blocking tradeoff table,
Monte Carlo retrieval-probability verification and the service benchmark.

Decision rule everywhere: the rank-1 result at or above the threshold, or
no result.  MATCHED entries yield TP (correct id) or FP+FN (wrong id) or
FN (no result); UNMATCHED entries yield FP (any result) or a true
negative excluded from recall; UNDECIDED entries count only as FP when
linked to a record outside their own correct set.
"""

from __future__ import annotations

import csv
import json
import statistics
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .blocking import BandConfig
from .entity_store import Address, DatasetSchema, EntityStore, QueryRecord
from .hashing import HashFamily
from .pipeline import Linker, LinkerConfig, preprocess
from .scoring import Strategy

MATCHED, UNMATCHED, UNDECIDED = "MATCHED", "UNMATCHED", "UNDECIDED"
CATEGORIES = (MATCHED, UNMATCHED, UNDECIDED)


class InvalidGroundTruth(ValueError):
    pass


class InfeasibleSimilarity(ValueError):
    pass


class ServiceUnreachable(ConnectionError):
    pass


@dataclass(frozen=True)
class GroundTruthEntry:
    query: QueryRecord
    category: str
    correct_ids: tuple[int, ...] = ()
    perturbation: str = ""

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise InvalidGroundTruth(f"unknown category {self.category!r}")
        if self.category == MATCHED and not self.correct_ids:
            raise InvalidGroundTruth("MATCHED entry needs correct ids")


def load_truth(path: str | Path) -> list[GroundTruthEntry]:
    """Read the delimited ground-truth format (header row expected)."""
    entries = []
    with open(path, encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for i, row in enumerate(reader):
            try:
                name = row["name"]
                category = row["category"]
                ids = tuple(int(x) for x in row.get("correct_ids", "").split(";")
                            if x != "")
            except (KeyError, ValueError) as exc:
                raise InvalidGroundTruth(f"row {i}: {exc}") from exc
            addr = Address(street=row.get("street") or None,
                           city=row.get("city") or None,
                           postal=row.get("postal") or None,
                           country=row.get("country") or None)
            query = QueryRecord(
                name=name,
                addresses=(addr,) if not addr.is_empty() else (),
                sics=(row["sic"],) if row.get("sic") else (),
            )
            entries.append(GroundTruthEntry(query, category, ids,
                                            row.get("perturbation", "")))
    return entries


@dataclass
class EvalReport:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    undecided_fp: int = 0
    true_negatives: int = 0
    entries: int = 0
    mean_comparisons: float = 0.0
    per_category: dict = field(default_factory=dict)

    @property
    def recall(self) -> float:
        denom = self.tp + self.fn
        return self.tp / denom if denom else 0.0

    @property
    def precision(self) -> float:
        denom = self.tp + self.fp
        return self.tp / denom if denom else 0.0

    def to_dict(self) -> dict:
        return {
            "entries": self.entries,
            "tp": self.tp, "fp": self.fp, "fn": self.fn,
            "undecidedFp": self.undecided_fp,
            "trueNegatives": self.true_negatives,
            "recall": round(self.recall, 6),
            "precision": round(self.precision, 6),
            "meanComparisons": round(self.mean_comparisons, 2),
            "perCategory": self.per_category,
        }


def _tally(report: EvalReport, entry: GroundTruthEntry,
           top_id: Optional[int]) -> None:
    cat = report.per_category.setdefault(
        entry.category, {"total": 0, "tp": 0, "fp": 0, "fn": 0, "tn": 0})
    cat["total"] += 1
    if entry.category == MATCHED:
        if top_id is None:
            report.fn += 1
            cat["fn"] += 1
        elif top_id in entry.correct_ids:
            report.tp += 1
            cat["tp"] += 1
        else:
            report.fp += 1
            report.fn += 1
            cat["fp"] += 1
            cat["fn"] += 1
    elif entry.category == UNMATCHED:
        if top_id is None:
            report.true_negatives += 1
            cat["tn"] += 1
        else:
            report.fp += 1
            cat["fp"] += 1
    else:  # UNDECIDED: FP only when linked outside its own record set
        if top_id is not None and top_id not in entry.correct_ids:
            report.fp += 1
            report.undecided_fp += 1
            cat["fp"] += 1


def evaluate(
    entries: Sequence[GroundTruthEntry],
    linker: Linker,
    strategy: Optional[Strategy] = None,
    threshold: Optional[float] = None,
    name_only: bool = False,
) -> EvalReport:
    report = EvalReport(entries=len(entries))
    total_comparisons = 0
    for entry in entries:
        query = entry.query
        if name_only:
            query = QueryRecord(name=query.name, names_alt=query.names_alt)
        results, comparisons = linker.link_one(
            query, strategy=strategy, threshold=threshold, top_n=1)
        total_comparisons += comparisons
        _tally(report, entry, results[0].record_id if results else None)
    report.mean_comparisons = total_comparisons / len(entries) if entries else 0.0
    return report


def trivial_baseline(
    entries: Sequence[GroundTruthEntry],
    store: EntityStore,
) -> EvalReport:
    """Exact case-insensitive name lookup; same report semantics."""
    lookup: dict[str, int] = {}
    for rec in store:
        lookup.setdefault(rec.name.lower(), rec.id)
    report = EvalReport(entries=len(entries))
    for entry in entries:
        _tally(report, entry, lookup.get(entry.query.name.lower()))
    return report


# -- blocking tradeoff ----------------------------------------------------


@dataclass
class TradeoffRow:
    config: BandConfig
    recall: float
    index_bytes: int
    mean_comparisons: float

    def to_dict(self) -> dict:
        return {"config": str(self.config), "recall": round(self.recall, 6),
                "indexBytes": self.index_bytes,
                "meanComparisons": round(self.mean_comparisons, 2)}


def blocking_tradeoff(
    corpus_path: str | Path,
    schema: DatasetSchema,
    base_config: LinkerConfig,
    configs: Sequence[BandConfig],
    entries: Sequence[GroundTruthEntry],
    work_dir: str | Path,
) -> list[TradeoffRow]:
    """Preprocess the corpus once per band config and evaluate name-only
    recall, blocking index size and mean candidate count."""
    import dataclasses

    rows = []
    for cfg in configs:
        sub = Path(work_dir) / f"tradeoff_{cfg.rows}x{cfg.bands}"
        run_cfg = dataclasses.replace(base_config, rows=cfg.rows,
                                      bands=cfg.bands)
        with open(corpus_path, encoding="utf-8") as fh:
            preprocess(fh, schema, run_cfg, sub)
        linker = Linker(run_cfg, sub)
        report = evaluate(entries, linker, name_only=True)
        rows.append(TradeoffRow(
            config=cfg,
            recall=report.recall,
            index_bytes=(sub / run_cfg.blocking_db).stat().st_size,
            mean_comparisons=report.mean_comparisons,
        ))
    return rows


# -- Monte Carlo retrieval probability ------------------------------------


def montecarlo_scurve(
    cfg: BandConfig,
    similarity: float,
    trials: int = 2000,
    seed: int = 0,
    max_union: int = 200,
) -> float:
    """Empirical probability that two sets with exact Jaccard `similarity`
    share at least one band.

    Set elements are uniform random 64-bit values standing in for shingle
    hashes; a pair collides when some band's row chunk is identical.
    """
    if not 0.0 <= similarity <= 1.0:
        raise ValueError(f"similarity {similarity} outside [0, 1]")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    frac = Fraction(similarity).limit_denominator(max_union)
    if abs(float(frac) - similarity) > 1e-9:
        raise InfeasibleSimilarity(
            f"similarity {similarity} not representable with union <= {max_union}")
    # scale the fraction up to a comfortable union size
    scale = max(1, 40 // frac.denominator) if frac.denominator else 1
    inter = frac.numerator * scale
    union = frac.denominator * scale
    if union == 0:       # similarity == 0 has denominator 1, numerator 0
        union = 40
    if inter == union:   # similarity == 1: identical sets always collide
        return 1.0

    rng = np.random.default_rng(seed)
    family = HashFamily(seed=int(rng.integers(1 << 32)), count=cfg.num_hashes)
    a_only = (union - inter + 1) // 2
    hits = 0
    for _ in range(trials):
        elems = rng.integers(0, 1 << 64, size=union, dtype=np.uint64)
        shared = elems[:inter]
        set_a = np.concatenate([shared, elems[inter:inter + a_only]])
        set_b = np.concatenate([shared, elems[inter + a_only:]])
        if set_a.size == 0 or set_b.size == 0:
            raise InfeasibleSimilarity("degenerate empty set in trial")
        sig_a = family.apply(set_a).min(axis=1).reshape(cfg.bands, cfg.rows)
        sig_b = family.apply(set_b).min(axis=1).reshape(cfg.bands, cfg.rows)
        if bool((sig_a == sig_b).all(axis=1).any()):
            hits += 1
    return hits / trials


# -- service benchmark ----------------------------------------------------


@dataclass
class BenchResult:
    clients: int
    requests: int
    batch_size: int
    latencies_ms: list[float]
    wall_seconds: float
    high_water: int
    errors: int = 0

    @property
    def mean_ms(self) -> float:
        return statistics.fmean(self.latencies_ms) if self.latencies_ms else 0.0

    @property
    def p50_ms(self) -> float:
        return float(np.percentile(self.latencies_ms, 50)) if self.latencies_ms else 0.0

    @property
    def p95_ms(self) -> float:
        return float(np.percentile(self.latencies_ms, 95)) if self.latencies_ms else 0.0

    @property
    def throughput_rps(self) -> float:
        return len(self.latencies_ms) / self.wall_seconds if self.wall_seconds else 0.0

    def to_row(self) -> dict:
        return {
            "clients": self.clients,
            "requests": self.requests,
            "batchSize": self.batch_size,
            "meanMs": round(self.mean_ms, 3),
            "p50Ms": round(self.p50_ms, 3),
            "p95Ms": round(self.p95_ms, 3),
            "throughputRps": round(self.throughput_rps, 3),
            "highWater": self.high_water,
            "errors": self.errors,
        }


def _http_json(url: str, payload: Optional[dict] = None, timeout: float = 60.0) -> dict:
    data = json.dumps(payload).encode("utf-8") if payload is not None else None
    req = urllib.request.Request(
        url, data=data,
        headers={"Content-Type": "application/json"} if data else {})
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        raise ServiceUnreachable(f"{url}: HTTP {exc.code}") from exc
    except (urllib.error.URLError, OSError) as exc:
        raise ServiceUnreachable(f"{url}: {exc}") from exc


def bench(
    endpoint: str,
    clients: int,
    requests_per_client: int,
    queries: Sequence[dict],
    batch_size: int = 80,
) -> BenchResult:
    """Drive `clients` concurrent clients, each issuing
    `requests_per_client` /link batches; reports latency and throughput."""
    endpoint = endpoint.rstrip("/")
    health = _http_json(endpoint + "/health")
    if health.get("status") != "ok":
        raise ServiceUnreachable(f"service not ready: {health}")

    batches = []
    for i in range(clients * requests_per_client):
        start = (i * batch_size) % max(len(queries), 1)
        batch = [queries[(start + j) % len(queries)] for j in range(batch_size)]
        batches.append({"queries": batch})

    latencies: list[list[float]] = [[] for _ in range(clients)]
    errors = [0] * clients

    def client(ci: int) -> None:
        for ri in range(requests_per_client):
            payload = batches[ci * requests_per_client + ri]
            t0 = time.perf_counter()
            try:
                _http_json(endpoint + "/link", payload)
            except ServiceUnreachable:
                errors[ci] += 1
                continue
            latencies[ci].append((time.perf_counter() - t0) * 1000.0)

    threads = [threading.Thread(target=client, args=(i,)) for i in range(clients)]
    t0 = time.perf_counter()
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    wall = time.perf_counter() - t0

    info = _http_json(endpoint + "/info")
    return BenchResult(
        clients=clients,
        requests=clients * requests_per_client,
        batch_size=batch_size,
        latencies_ms=[x for per in latencies for x in per],
        wall_seconds=wall,
        high_water=int(info.get("concurrencyHighWater", 0)),
        errors=sum(errors),
    )


def write_bench_csv(results: Sequence[BenchResult], path: str | Path) -> None:
    rows = [r.to_row() for r in results]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
