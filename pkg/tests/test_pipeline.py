import io

import pytest

from rlink import synthdata as sd
from rlink.entity_store import Address, DatasetSchema, QueryRecord
from rlink.pipeline import Linker, LinkerConfig, MatchResult, preprocess
from rlink.scoring import ScoringConfig, Strategy

SCHEMA = DatasetSchema({c: c for c in
                        ("name", "street", "city", "postal", "country", "sic")})


def _corpus_csv(n=120, seed=99):
    gaz = sd.gen_gazetteer(100, seed=seed)
    recs = sd.gen_corpus(n, seed=seed, gazetteer=gaz)
    buf = io.StringIO()
    import csv as csvmod
    w = csvmod.writer(buf)
    w.writerow(sd.CORPUS_COLUMNS)
    for r in recs:
        w.writerow([r.name, r.street, r.city, r.postal, r.country, r.sic])
    return recs, buf.getvalue()


@pytest.fixture(scope="module")
def small_env(tmp_path_factory):
    base = tmp_path_factory.mktemp("small")
    recs, csv_text = _corpus_csv()
    config = LinkerConfig()
    stats = preprocess(io.StringIO(csv_text), SCHEMA, config, base)
    return {"dir": base, "recs": recs, "csv": csv_text, "config": config,
            "stats": stats}


class TestConfig:
    def test_yaml_roundtrip(self, tmp_path):
        cfg = LinkerConfig(rows=5, bands=18, strategy="maxmin", threshold=0.5,
                           scoring=ScoringConfig(tau_km=25.0))
        p = tmp_path / "c.yaml"
        cfg.save(p)
        loaded = LinkerConfig.load(p)
        assert loaded == cfg
        assert loaded.digest() == cfg.digest()

    def test_digest_changes(self):
        assert LinkerConfig().digest() != LinkerConfig(threshold=0.8).digest()

    def test_validation(self):
        with pytest.raises(ValueError):
            LinkerConfig(threshold=1.5)
        with pytest.raises(ValueError):
            LinkerConfig(top_n=0)


class TestPreprocess:
    def test_outputs_exist(self, small_env):
        assert (small_env["dir"] / "entities.db").exists()
        assert (small_env["dir"] / "blocking.db").exists()
        assert small_env["stats"]["ingest"]["ingested"] == 120

    def test_deterministic_bytes(self, small_env, tmp_path):
        again = tmp_path / "again"
        preprocess(io.StringIO(small_env["csv"]), SCHEMA,
                   small_env["config"], again)
        for name in ("entities.db", "blocking.db"):
            assert (again / name).read_bytes() == \
                (small_env["dir"] / name).read_bytes()

    def test_atomic_on_failure(self, tmp_path):
        # a source that fails mid-ingest leaves no database files behind
        class Boom(io.StringIO):
            def __iter__(self):
                yield "name\n"
                yield "Good Co\n"
                raise RuntimeError("source died")

        with pytest.raises(RuntimeError):
            preprocess(Boom(), DatasetSchema({"name": "name"}),
                       LinkerConfig(), tmp_path)
        assert not (tmp_path / "entities.db").exists()
        assert not (tmp_path / "blocking.db").exists()
        assert not list(tmp_path.glob("*.tmp"))


class TestLinker:
    def test_band_config_mismatch(self, small_env):
        bad = LinkerConfig(rows=5, bands=18)
        with pytest.raises(ValueError):
            Linker(bad, small_env["dir"])

    def test_exact_query_ranks_first(self, small_env):
        linker = Linker(small_env["config"], small_env["dir"])
        rec = small_env["recs"][7]
        results, comparisons = linker.link_one(QueryRecord(name=rec.name))
        assert results[0].record_id == 7
        assert results[0].score == pytest.approx(1.0)
        assert comparisons >= 1

    def test_results_sorted_and_thresholded(self, small_env):
        linker = Linker(small_env["config"], small_env["dir"])
        rec = small_env["recs"][3]
        results, _ = linker.link_one(QueryRecord(name=rec.name), threshold=0.1,
                                     top_n=50)
        scores = [r.score for r in results]
        assert scores == sorted(scores, reverse=True)
        assert all(s >= 0.1 for s in scores)

    def test_top_n_limits(self, small_env):
        linker = Linker(small_env["config"], small_env["dir"])
        rec = small_env["recs"][3]
        results, _ = linker.link_one(QueryRecord(name=rec.name), threshold=0.0,
                                     top_n=2)
        assert len(results) <= 2

    def test_alt_names_extend_candidates(self, small_env):
        linker = Linker(small_env["config"], small_env["dir"])
        a, b = small_env["recs"][1], small_env["recs"][2]
        _, comp_single = linker.link_one(QueryRecord(name=a.name))
        _, comp_alt = linker.link_one(
            QueryRecord(name=a.name, names_alt=(b.name,)))
        assert comp_alt >= comp_single

    def test_strategy_override(self, small_env):
        linker = Linker(small_env["config"], small_env["dir"])
        rec = small_env["recs"][5]
        r1, _ = linker.link_one(QueryRecord(name=rec.name),
                                strategy=Strategy.JACCARD)
        assert r1[0].record_id == 5


class TestBatch:
    def test_worker_count_invariant(self, small_env):
        linker = Linker(small_env["config"], small_env["dir"])
        queries = [QueryRecord(name=r.name) for r in small_env["recs"][:30]]
        serial = linker.link_batch(queries, workers=1)
        parallel = linker.link_batch(queries, workers=4)
        assert [[m.to_dict() for m in r[0]] for r in serial] == \
            [[m.to_dict() for m in r[0]] for r in parallel]

    def test_alignment(self, small_env):
        linker = Linker(small_env["config"], small_env["dir"])
        queries = [QueryRecord(name=r.name) for r in small_env["recs"][:10]]
        out = linker.link_batch(queries)
        assert len(out) == 10
        for i, (results, _) in enumerate(out):
            assert results[0].record_id == i


class TestMatchResult:
    def test_to_dict_shape(self, small_env):
        linker = Linker(small_env["config"], small_env["dir"])
        rec = small_env["recs"][0]
        results, _ = linker.link_one(QueryRecord(name=rec.name))
        d = results[0].to_dict()
        assert set(d) == {"recordId", "score", "subScores", "record"}
        assert d["record"]["name"] == rec.name
        assert "name" in d["subScores"]
