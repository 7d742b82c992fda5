import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rlink.entity_store import Address, QueryRecord, Record
from rlink.scoring import (
    CityTrie,
    CoordinateOutOfRange,
    EmptyString,
    Leaf,
    MaxNode,
    NonDigitInput,
    ScoringConfig,
    ScoringTree,
    Strategy,
    SumNode,
    WeightedString,
    build_scoring_tree,
    build_weighted_name,
    city_score,
    company_name_score,
    country_score,
    haversine_km,
    industry_score,
    jaccard_score,
    lev_score,
    postal_score,
    street_score,
    weighted_jaccard_score,
    weighted_lev_score,
)
from rlink.textnorm import CleanText, LegalEntityLexicon, clean_light

CFG = ScoringConfig()


@pytest.fixture(scope="module")
def lex():
    return LegalEntityLexicon.bundled()


def ct(s: str) -> CleanText:
    return clean_light(s)


class TestLevScore:
    def test_diacritic_pair(self):
        assert lev_score(ct("Dürr"), ct("Durr")) == pytest.approx(0.75)

    def test_umlaut_expansion(self):
        assert lev_score(ct("Dürr"), ct("Duerr")) == pytest.approx(2 / 3, abs=1e-9)

    def test_one_letter_swap(self):
        assert lev_score(ct("Garage Rex AG"), ct("Garage Rey AG")) == \
            pytest.approx(1 - 2 / 26)

    def test_identical(self):
        assert lev_score(ct("alpha"), ct("alpha")) == 1.0

    def test_empty_raises(self):
        with pytest.raises(EmptyString):
            lev_score(ct(""), ct("x"))

    def test_brute_force_oracle(self):
        # recursive indel distance as an independent oracle
        import functools
        import random

        def oracle(a, b):
            @functools.lru_cache(maxsize=None)
            def d(i, j):
                if i == 0:
                    return j
                if j == 0:
                    return i
                best = min(d(i - 1, j) + 1, d(i, j - 1) + 1)
                if a[i - 1] == b[j - 1]:
                    best = min(best, d(i - 1, j - 1))
                return best
            return d(len(a), len(b))

        rng = random.Random(4)
        for _ in range(300):
            a = "".join(rng.choice("abcd") for _ in range(rng.randint(1, 12)))
            b = "".join(rng.choice("abcd") for _ in range(rng.randint(1, 12)))
            expected = 1 - oracle(a, b) / (len(a) + len(b))
            assert lev_score(ct(a), ct(b)) == pytest.approx(expected)

    @settings(max_examples=300)
    @given(st.text(alphabet="abcdef", min_size=1, max_size=15),
           st.text(alphabet="abcdef", min_size=1, max_size=15))
    def test_range_and_symmetry(self, a, b):
        s = lev_score(ct(a), ct(b))
        assert 0.0 <= s <= 1.0
        assert s == pytest.approx(lev_score(ct(b), ct(a)))


class TestJaccardScore:
    def test_accent_mismatch(self):
        assert jaccard_score(ct("téléski"), ct("teleski")) == pytest.approx(0.2)

    def test_diacritic_pair(self):
        assert jaccard_score(ct("Dürr"), ct("Durr")) == pytest.approx(0.2)

    def test_umlaut_expansion(self):
        assert jaccard_score(ct("Dürr"), ct("Duerr")) == pytest.approx(1 / 6, abs=1e-9)

    def test_identical(self):
        assert jaccard_score(ct("aa"), ct("aa")) == 1.0

    @settings(max_examples=300)
    @given(st.text(alphabet="abcdef ", min_size=1, max_size=20),
           st.text(alphabet="abcdef ", min_size=1, max_size=20))
    def test_range_and_symmetry(self, a, b):
        if not ct(a).text or not ct(b).text:
            return
        s = jaccard_score(ct(a), ct(b))
        assert 0.0 <= s <= 1.0
        assert s == pytest.approx(jaccard_score(ct(b), ct(a)))


class TestWeightedStrings:
    def test_uniform_reduces_to_plain_lev(self):
        a, b = ct("garage rex"), ct("garage rey")
        assert weighted_lev_score(WeightedString.from_clean(a),
                                  WeightedString.from_clean(b)) == \
            pytest.approx(lev_score(a, b))

    def test_uniform_reduces_to_plain_jaccard(self):
        a, b = ct("telescope co"), ct("telescopic corp")
        assert weighted_jaccard_score(WeightedString.from_clean(a),
                                      WeightedString.from_clean(b)) == \
            pytest.approx(jaccard_score(a, b))

    def test_legal_entity_lev_golden(self, lex):
        # differing legal-entity types cost almost nothing
        wa = build_weighted_name("Garage Rex AG", lex, CFG)
        wb = build_weighted_name("Garage Rex GmbH", lex, CFG)
        assert weighted_lev_score(wa, wb) == pytest.approx(0.9092, abs=1e-3)

    def test_legal_entity_lev_one_letter_swap(self, lex):
        wa = build_weighted_name("Garage Rex AG", lex, CFG)
        wb = build_weighted_name("Garage Rey AG", lex, CFG)
        assert weighted_lev_score(wa, wb) == pytest.approx(0.90909, abs=1e-3)

    def test_diacritic_downweight(self, lex):
        wa = build_weighted_name("Dürr", lex, CFG)
        wb = build_weighted_name("Durr", lex, CFG)
        # mismatch costs only the combining-mark weight
        expected = 1 - CFG.w_comb / (4 + CFG.w_comb + 4)
        assert weighted_lev_score(wa, wb) == pytest.approx(expected)

    def test_short_name_units_weighted(self, lex):
        w = build_weighted_name("Cisco Systems", lex, CFG, short_name="cisco")
        weights = {u: wt for u, wt in w.units}
        assert weights["c"] == CFG.short_name_factor
        assert weights["y"] == 1.0

    def test_city_tokens_downweighted_in_vicinity(self, lex):
        trie = CityTrie()
        trie.insert("Zurich", 47.3769, 8.5417)
        w = build_weighted_name("Transport Zurich", lex, CFG, trie=trie,
                                other_coords=(47.3769, 8.5417))
        downweighted = "".join(u for u, wt in w.units if wt == CFG.w_city)
        assert downweighted == "zurich"

    def test_city_tokens_kept_when_far(self, lex):
        trie = CityTrie()
        trie.insert("Zurich", 47.3769, 8.5417)
        w = build_weighted_name("Transport Zurich", lex, CFG, trie=trie,
                                other_coords=(48.8566, 2.3522))
        assert all(wt == 1.0 for u, wt in w.units)


class TestCompanyNameScore:
    def _record(self, name, **kw):
        return Record.build(id=0, name=name, **kw)

    def test_maxmin_vs_weighted_formulas(self, lex):
        # word permutation: Jaccard high, Levenshtein low; maxmin rewards
        # the better of the two while the mean penalizes
        q = "Meier Maler GmbH"
        r = self._record("Maler Meier GmbH")
        jac = company_name_score(q, r, Strategy.JACCARD, lex=lex)
        lev = company_name_score(q, r, Strategy.LEVENSHTEIN, lex=lex)
        maxmin = company_name_score(q, r, Strategy.MAXMIN, lex=lex)
        weighted = company_name_score(q, r, Strategy.WEIGHTED, lex=lex)
        assert jac > 0.8 and lev < jac
        assert maxmin == pytest.approx(0.9 * max(jac, lev) + 0.1 * min(jac, lev))
        assert weighted == pytest.approx(0.5 * (jac + lev))

    def test_maxmin_vs_weighted_golden(self):
        # combination rule on a (1.0, 0.4) score pair
        assert 0.9 * max(1.0, 0.4) + 0.1 * min(1.0, 0.4) == \
            pytest.approx(0.94, abs=1e-12)
        assert 0.5 * (1.0 + 0.4) == pytest.approx(0.7, abs=1e-12)

    def test_rls_legal_entity_high(self, lex):
        r = self._record("Garage Rex AG")
        s = company_name_score("Garage Rex GmbH", r, Strategy.RLS, lex=lex)
        plain = company_name_score("Garage Rex GmbH", r, Strategy.MAXMIN, lex=lex)
        assert s > 0.89
        assert s > plain

    def test_rls_diacritics_near_perfect(self, lex):
        r = self._record("Müller Bäckerei")
        s = company_name_score("Muller Backerei", r, Strategy.RLS, lex=lex)
        assert s > 0.95

    def test_plain_strategies(self, lex):
        r = self._record("Acme Corp")
        jac = company_name_score("Acme Corp", r, Strategy.JACCARD, lex=lex)
        lev = company_name_score("Acme Corp", r, Strategy.LEVENSHTEIN, lex=lex)
        assert jac == lev == 1.0

    def test_rls_requires_lexicon(self):
        with pytest.raises(ValueError):
            company_name_score("A B", self._record("A B"), Strategy.RLS)

    @settings(max_examples=200, deadline=None)
    @given(st.text(alphabet="abcdxyz ", min_size=1, max_size=18),
           st.text(alphabet="abcdxyz ", min_size=1, max_size=18))
    def test_all_strategies_in_range(self, a, b):
        if not clean_light(a).text or not clean_light(b).text:
            return
        lex = LegalEntityLexicon.bundled()
        rec = Record.build(id=0, name=b)
        for strategy in Strategy:
            s = company_name_score(a, rec, strategy, lex=lex)
            assert 0.0 <= s <= 1.0 + 1e-12


class TestHaversine:
    def test_zero_distance(self):
        assert haversine_km((47.0, 8.0), (47.0, 8.0)) == 0.0

    def test_zurich_bern(self):
        d = haversine_km((47.3769, 8.5417), (46.9480, 7.4474))
        assert d == pytest.approx(95.0, abs=3.0)

    def test_equator_degree(self):
        # one degree of longitude at the equator
        d = haversine_km((0.0, 0.0), (0.0, 1.0))
        assert d == pytest.approx(2 * math.pi * 6371.0 / 360, abs=0.01)

    def test_out_of_range(self):
        with pytest.raises(CoordinateOutOfRange):
            haversine_km((91.0, 0.0), (0.0, 0.0))

    @settings(max_examples=300)
    @given(st.floats(-90, 90), st.floats(-180, 180),
           st.floats(-90, 90), st.floats(-180, 180))
    def test_symmetry_and_bound(self, lat1, lon1, lat2, lon2):
        d = haversine_km((lat1, lon1), (lat2, lon2))
        assert 0.0 <= d <= math.pi * 6371.0 + 1e-6
        assert d == pytest.approx(haversine_km((lat2, lon2), (lat1, lon1)))


class TestCityTrie:
    def test_insert_lookup(self):
        trie = CityTrie()
        assert trie.insert("Zürich", 47.3769, 8.5417)
        # lookup ignores case and diacritics
        assert trie.lookup("zurich") == (47.3769, 8.5417)

    def test_duplicate_keeps_first(self):
        trie = CityTrie()
        trie.insert("Bern", 1.0, 2.0)
        assert not trie.insert("Bern", 9.0, 9.0)
        assert trie.lookup("Bern") == (1.0, 2.0)
        assert trie.duplicate_count == 1

    def test_missing(self):
        assert CityTrie().lookup("nowhere") is None

    def test_from_file_skips_malformed(self, tmp_path):
        p = tmp_path / "gaz.csv"
        p.write_text("Bern,46.9,7.4\nbad,row\nX,999,0\n", encoding="utf-8")
        trie = CityTrie.from_file(p)
        assert trie.entry_count == 1
        assert trie.malformed_count == 2

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.tuples(
        st.text(alphabet="abcdef", min_size=1, max_size=8),
        st.floats(-90, 90), st.floats(-180, 180)), max_size=10))
    def test_roundtrip_property(self, entries):
        trie = CityTrie()
        first = {}
        for name, lat, lon in entries:
            trie.insert(name, lat, lon)
            first.setdefault(name, (lat, lon))
        for name, coords in first.items():
            assert trie.lookup(name) == coords


class TestAttributeScores:
    def test_city_geo_decay(self):
        trie = CityTrie()
        trie.insert("Zurich", 47.3769, 8.5417)
        trie.insert("Bern", 46.9480, 7.4474)
        rec = Record.build(id=0, name="x", city="Bern")
        s = city_score("Zurich", rec, trie)
        d = haversine_km((47.3769, 8.5417), (46.9480, 7.4474))
        assert s == pytest.approx(math.exp(-d / 30.0))

    def test_city_fallback_lev(self):
        rec = Record.build(id=0, name="x", city="Bern")
        assert city_score("Berne", rec, None) == pytest.approx(
            lev_score(ct("Berne"), ct("Bern")))

    def test_postal(self):
        assert postal_score("8004", "8005") == pytest.approx(0.75)
        assert postal_score("8004", "8004") == 1.0
        assert postal_score("10115", "90") == 0.0

    def test_postal_empty(self):
        with pytest.raises(EmptyString):
            postal_score("", "8004")

    def test_country(self):
        assert country_score("ch", "CH") == 1.0
        assert country_score("CH", "DE") == 0.0

    def test_industry_prefix(self):
        assert industry_score("7372", "7371") == pytest.approx(0.75)
        assert industry_score("73", "7372") == pytest.approx(0.5)
        assert industry_score("1", "9") == 0.0

    def test_industry_validation(self):
        with pytest.raises(NonDigitInput):
            industry_score("73x2", "7372")
        with pytest.raises(NonDigitInput):
            industry_score("12345", "7372")

    def test_street_order_invariant(self):
        a = street_score("Bahnhofstrasse 10", "10 Bahnhofstrasse")
        assert a == pytest.approx(1.0)

    def test_street_against_brute_force(self):
        import itertools

        def oracle(s1, s2):
            t1, t2 = ct(s1).tokens(), ct(s2).tokens()
            if len(t1) > len(t2):
                t1, t2 = t2, t1
            best = 0.0
            for perm in itertools.permutations(range(len(t2)), len(t1)):
                total = sum(
                    lev_score(ct(t1[i]), ct(t2[j]))
                    for i, j in enumerate(perm))
                best = max(best, total)
            return best / max(len(t1), len(t2))

        pairs = [
            ("seestrasse 12 b", "seestr 12"),
            ("rue de la gare 4", "gare rue 4a"),
            ("main st 100", "100 main street"),
        ]
        for s1, s2 in pairs:
            assert street_score(s1, s2) == pytest.approx(oracle(s1, s2))


class _ConstLeaf:
    def __init__(self, value):
        self.value = value

    def evaluate(self, record, sink):
        return self.value


class TestScoringTree:
    def _record(self, **kw):
        return Record.build(id=0, name=kw.pop("name", "acme gmbh"), **kw)

    def test_sum_renormalizes_missing(self, lex):
        query = QueryRecord(name="acme gmbh",
                            addresses=(Address(city="Zurich"),),
                            sics=("7372",))
        tree = build_scoring_tree(query, Strategy.RLS, lex=lex)
        # record lacks city and sic: only the name contributes
        score, subs = tree.evaluate(self._record())
        assert score == pytest.approx(subs["name"])

    def test_full_tree_weights(self, lex):
        query = QueryRecord(name="acme gmbh",
                            addresses=(Address(city="Bern"),),
                            sics=("7372",))
        tree = build_scoring_tree(query, Strategy.RLS, lex=lex)
        rec = self._record(city="Bern", sic="7372")
        score, subs = tree.evaluate(rec)
        expected = (0.6 * subs["name"] + 0.3 * subs["city"] + 0.1 * subs["sic"])
        assert score == pytest.approx(expected)

    def test_repeated_sics_max(self, lex):
        query = QueryRecord(name="acme", sics=("7372", "1000"))
        tree = build_scoring_tree(query, Strategy.RLS, lex=lex)
        _, subs = tree.evaluate(self._record(name="acme", sic="7372"))
        assert subs["sic"] == 1.0

    def test_alt_names_max(self, lex):
        query = QueryRecord(name="zzz qqq", names_alt=("acme",))
        tree = build_scoring_tree(query, Strategy.RLS, lex=lex)
        score, subs = tree.evaluate(self._record(name="acme"))
        assert subs["name"] == pytest.approx(1.0)
        assert score == pytest.approx(1.0)

    def test_scores_in_range(self, lex):
        query = QueryRecord(name="garage rex",
                            addresses=(Address(street="seestrasse 1",
                                               city="Bern", postal="3000",
                                               country="CH"),),
                            sics=("7372",))
        tree = build_scoring_tree(query, Strategy.RLS, lex=lex)
        rec = self._record(name="garage rey", street="seestrasse 2",
                           city="Bern", postal="3001", country="CH",
                           sic="7371")
        score, subs = tree.evaluate(rec)
        assert 0.0 <= score <= 1.0
        for v in subs.values():
            assert 0.0 <= v <= 1.0

    @settings(max_examples=300)
    @given(st.lists(st.floats(0, 1), min_size=2, max_size=6),
           st.integers(0, 5), st.floats(0, 1))
    def test_monotone_evaluation(self, values, bump_idx, bumped):
        # raising any leaf score never lowers a sum/max combination
        bump_idx %= len(values)
        if bumped < values[bump_idx]:
            return
        weights = [1.0] * len(values)

        def root(vals):
            half = len(vals) // 2 or 1
            return SumNode([
                (1.0, MaxNode([_ConstLeaf(v) for v in vals[:half]])),
                (1.0, SumNode([(w, _ConstLeaf(v))
                               for w, v in zip(weights[half:], vals[half:])]))
                if vals[half:] else (1.0, _ConstLeaf(0.0)),
            ][:2 if vals[half:] else 1])

        before = ScoringTree(root(values)).evaluate(None)[0]
        values = list(values)
        values[bump_idx] = bumped
        after = ScoringTree(root(values)).evaluate(None)[0]
        assert after >= before - 1e-9
