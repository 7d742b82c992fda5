"""Similarity scoring: weighted edit/Jaccard scores, company-name scoring,
geo/postal/country/industry scorers, the city trie and the scoring tree.

Edit distance here is indel distance (insert/delete cost 1, substitution
realized as delete+insert, cost 2), operating over grapheme units so an
accented character counts as a single unit.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

from .entity_store import Address, QueryRecord, Record
from .textnorm import (
    CleanText,
    LegalEntityLexicon,
    clean_light,
    detect_legal_entity_spans,
    shingle_bigrams,
    strip_marks,
)

EARTH_RADIUS_KM = 6371.0

# marker prefix for legal-entity pseudo-units; cannot occur in cleaned text
_LE_MARK = "\x00"


class EmptyString(ValueError):
    pass


class CoordinateOutOfRange(ValueError):
    pass


class NonDigitInput(ValueError):
    pass


class Strategy(enum.Enum):
    JACCARD = "jaccard"
    LEVENSHTEIN = "levenshtein"
    WEIGHTED = "weighted"
    MAXMIN = "maxmin"
    RLS = "rls"


@dataclass(frozen=True)
class ScoringConfig:
    """All scoring tunables with their defaults.

    epsilon is the legal-entity weight deficit (pseudo-unit weight is
    1 - epsilon); w_comb / w_city are the reduced weights for combining
    characters and vicinity-confirmed city tokens; tau_km is the decay
    constant of the geo score; vicinity_km gates city down-weighting.
    """

    epsilon: float = 1.0 / 256.0
    w_comb: float = 0.25
    w_city: float = 0.25
    tau_km: float = 30.0
    vicinity_km: float = 50.0
    weight_name: float = 0.6
    weight_address: float = 0.3
    weight_industry: float = 0.1
    maxmin_hi: float = 0.9
    maxmin_lo: float = 0.1
    short_name_factor: float = 3.0


@dataclass(frozen=True)
class WeightedString:
    """Sequence of (unit, weight) pairs; units are graphemes or pseudo-tokens."""

    units: tuple[tuple[str, float], ...]

    @property
    def total_weight(self) -> float:
        return sum(w for _, w in self.units)

    @classmethod
    def from_clean(cls, ct: CleanText) -> "WeightedString":
        """Uniform weight 1 per grapheme; reduces the weighted scorers to
        their plain counterparts."""
        return cls(tuple((g, 1.0) for g in ct.graphemes()))


# -- basic string scores --------------------------------------------------


def _require_nonempty(*cts: CleanText) -> None:
    for ct in cts:
        if not ct.text:
            raise EmptyString("scorer requires non-empty input")


def _lcs_len(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[-1]))
        prev = cur
    return prev[-1]


def lev_score(s1: CleanText, s2: CleanText) -> float:
    """1 - indel(s1, s2) / (|s1| + |s2|) over grapheme units."""
    _require_nonempty(s1, s2)
    a, b = s1.graphemes(), s2.graphemes()
    dist = len(a) + len(b) - 2 * _lcs_len(a, b)
    return 1.0 - dist / (len(a) + len(b))


def weighted_lev_score(w1: WeightedString, w2: WeightedString) -> float:
    """Indel DP where deleting or inserting a unit costs its weight."""
    if not w1.units or not w2.units:
        raise EmptyString("scorer requires non-empty input")
    a, b = w1.units, w2.units
    prev = [0.0]
    for _, wt in b:
        prev.append(prev[-1] + wt)
    for ua, wa in a:
        cur = [prev[0] + wa]
        for j, (ub, wb) in enumerate(b):
            best = min(cur[-1] + wb, prev[j + 1] + wa)
            if ua == ub:
                best = min(best, prev[j])
            cur.append(best)
        prev = cur
    total = w1.total_weight + w2.total_weight
    return 1.0 - prev[-1] / total


def jaccard_score(s1: CleanText, s2: CleanText) -> float:
    """Bigram-shingle Jaccard similarity."""
    _require_nonempty(s1, s2)
    a, b = shingle_bigrams(s1), shingle_bigrams(s2)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def _bigram_weights(w: WeightedString) -> dict[str, float]:
    units = [(u, wt) for u, wt in w.units if u != " "]
    if not units:
        return {}
    grams: dict[str, float] = {}
    if len(units) == 1:
        u, wt = units[0]
        grams[u] = wt
        return grams
    for (u1, wt1), (u2, wt2) in zip(units, units[1:]):
        g = u1 + u2
        wt = (wt1 + wt2) / 2.0
        grams[g] = max(grams.get(g, 0.0), wt)
    return grams


def weighted_jaccard_score(w1: WeightedString, w2: WeightedString) -> float:
    """Weighted Jaccard: each bigram carries the mean weight of its units;
    score = sum(min weights) / sum(max weights) over the bigram union."""
    if not w1.units or not w2.units:
        raise EmptyString("scorer requires non-empty input")
    ga, gb = _bigram_weights(w1), _bigram_weights(w2)
    num = den = 0.0
    for g in ga.keys() | gb.keys():
        a, b = ga.get(g, 0.0), gb.get(g, 0.0)
        num += min(a, b)
        den += max(a, b)
    return num / den if den else 1.0


# -- weighted-string construction for the rls strategy --------------------


def build_weighted_name(
    name: str,
    lex: LegalEntityLexicon,
    cfg: ScoringConfig = ScoringConfig(),
    short_name: Optional[str] = None,
    trie: Optional["CityTrie"] = None,
    other_coords: Optional[tuple[float, float]] = None,
) -> WeightedString:
    """Company name as a WeightedString with all rls adjustments applied.

    * combining characters become separate units of weight w_comb;
    * each detected legal-entity span collapses to one pseudo-unit of
      weight 1 - epsilon, absorbing its adjacent space;
    * tokens of the short name have their characters weighted x3;
    * tokens resolving to a city within vicinity_km of `other_coords`
      have their characters weighted w_city.
    """
    ct = clean_light(name)
    tokens = ct.tokens()
    spans = detect_legal_entity_spans(tokens, lex)
    le_start = {s.start: s for s in spans}
    in_le = {i for s in spans for i in range(s.start, s.end)}

    short_tokens: set[str] = set()
    if short_name:
        short_tokens = set(clean_light(short_name).text.split())

    city_tokens: set[int] = set()
    if trie is not None and other_coords is not None:
        city_tokens = _vicinity_city_tokens(tokens, trie, other_coords, cfg)

    units: list[tuple[str, float]] = []
    i = 0
    while i < len(tokens):
        if i in le_start:
            span = le_start[i]
            phrase = " ".join(tokens[span.start:span.end])
            # absorb the separating space: drop the trailing space unit
            # emitted before this token (or skip the following one at i=0)
            if units and units[-1][0] == " ":
                units.pop()
            units.append((_LE_MARK + phrase, 1.0 - cfg.epsilon))
            i = span.end
            # a leading span swallows the following space instead of the
            # (absent) preceding one
            if i < len(tokens) and span.start != 0:
                units.append((" ", 1.0))
            continue
        factor = 1.0
        if tokens[i] in short_tokens:
            factor = cfg.short_name_factor
        elif i in city_tokens:
            factor = cfg.w_city
        for g in CleanText.from_text(tokens[i]).graphemes():
            base = g[0]
            units.append((base, factor))
            for mark in g[1:]:
                units.append((mark, cfg.w_comb * factor))
        if i + 1 < len(tokens):
            units.append((" ", 1.0))
        i += 1
    while units and units[-1][0] == " ":
        units.pop()
    return WeightedString(tuple(units))


def _vicinity_city_tokens(
    tokens: list[str],
    trie: "CityTrie",
    other_coords: tuple[float, float],
    cfg: ScoringConfig,
) -> set[int]:
    """Indices of tokens forming a city name within the vicinity radius."""
    hits: set[int] = set()
    for width in (2, 1):
        for i in range(len(tokens) - width + 1):
            if any(j in hits for j in range(i, i + width)):
                continue
            coords = trie.lookup(" ".join(tokens[i:i + width]))
            if coords is None:
                continue
            if haversine_km(coords, other_coords) <= cfg.vicinity_km:
                hits.update(range(i, i + width))
    return hits


# -- company name score ---------------------------------------------------


def company_name_score(
    query_name: str,
    record: Record,
    strategy: Strategy = Strategy.RLS,
    *,
    lex: Optional[LegalEntityLexicon] = None,
    trie: Optional["CityTrie"] = None,
    cfg: ScoringConfig = ScoringConfig(),
    query_short: Optional[str] = None,
    query_city: Optional[str] = None,
) -> float:
    """Company-name similarity under the selected strategy.

    rls builds weighted strings (combining-char / legal-entity /
    short-name / city adjustments) and combines with 0.9 max + 0.1 min;
    maxmin applies the same combination to the plain scores; weighted is
    the arithmetic mean; jaccard / levenshtein are the single plain score.
    """
    q_ct = clean_light(query_name)
    r_ct = record.clean_name if record.clean_name.text else clean_light(record.name)
    _require_nonempty(q_ct, r_ct)

    if strategy in (Strategy.JACCARD, Strategy.LEVENSHTEIN, Strategy.WEIGHTED,
                    Strategy.MAXMIN):
        s_jac = jaccard_score(q_ct, r_ct)
        s_lev = lev_score(q_ct, r_ct)
        if strategy is Strategy.JACCARD:
            return s_jac
        if strategy is Strategy.LEVENSHTEIN:
            return s_lev
        if strategy is Strategy.WEIGHTED:
            return 0.5 * (s_jac + s_lev)
        return cfg.maxmin_hi * max(s_jac, s_lev) + cfg.maxmin_lo * min(s_jac, s_lev)

    if lex is None:
        raise ValueError("rls strategy requires a legal-entity lexicon")
    q_coords = r_coords = None
    if trie is not None:
        if query_city:
            q_coords = trie.lookup(query_city)
        if record.city:
            r_coords = trie.lookup(record.city)
    wq = build_weighted_name(query_name, lex, cfg, short_name=query_short,
                             trie=trie, other_coords=r_coords)
    wr = build_weighted_name(record.name, lex, cfg, short_name=record.short_name,
                             trie=trie, other_coords=q_coords)
    s_jac = weighted_jaccard_score(wq, wr)
    s_lev = weighted_lev_score(wq, wr)
    return cfg.maxmin_hi * max(s_jac, s_lev) + cfg.maxmin_lo * min(s_jac, s_lev)


# -- geo / postal / country / industry / street ---------------------------


def haversine_km(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance in kilometers (Earth radius 6371.0 km)."""
    for lat, lon in (a, b):
        if not -90.0 <= lat <= 90.0 or not -180.0 <= lon <= 180.0:
            raise CoordinateOutOfRange(f"bad coordinates ({lat}, {lon})")
    lat1, lon1, lat2, lon2 = map(math.radians, (*a, *b))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


class CityTrie:
    """Character trie over cleaned city names mapping to (lat, lon)."""

    __slots__ = ("_root", "entry_count", "duplicate_count", "malformed_count")

    def __init__(self):
        self._root: dict = {}
        self.entry_count = 0
        self.duplicate_count = 0
        self.malformed_count = 0

    @staticmethod
    def _key(name: str) -> str:
        return strip_marks(clean_light(name))

    def insert(self, name: str, lat: float, lon: float) -> bool:
        """Insert a city; duplicates keep the first entry (returns False)."""
        key = self._key(name)
        if not key:
            return False
        node = self._root
        for ch in key:
            node = node.setdefault(ch, {})
        if None in node:
            self.duplicate_count += 1
            return False
        node[None] = (lat, lon)
        self.entry_count += 1
        return True

    def lookup(self, name: str) -> Optional[tuple[float, float]]:
        node = self._root
        for ch in self._key(name):
            node = node.get(ch)
            if node is None:
                return None
        return node.get(None)

    @classmethod
    def from_file(cls, path: str | Path, delimiter: str = ",") -> "CityTrie":
        """Build from a gazetteer file with rows: name, latitude, longitude.

        Malformed rows are skipped and counted.
        """
        trie = cls()
        with open(path, encoding="utf-8") as fh:
            for row in csv.reader(fh, delimiter=delimiter):
                if not row or row[0].startswith("#"):
                    continue
                try:
                    name, lat, lon = row[0], float(row[1]), float(row[2])
                except (IndexError, ValueError):
                    trie.malformed_count += 1
                    continue
                if not -90.0 <= lat <= 90.0 or not -180.0 <= lon <= 180.0:
                    trie.malformed_count += 1
                    continue
                trie.insert(name, lat, lon)
        return trie


def city_score(
    q_city: str,
    record: Record,
    trie: Optional[CityTrie] = None,
    cfg: ScoringConfig = ScoringConfig(),
) -> float:
    """exp(-d/tau) over the Haversine distance when both cities resolve;
    otherwise the Levenshtein score of the city names."""
    if not q_city:
        raise EmptyString("query city must be non-empty")
    r_city = record.city or ""
    if trie is not None and r_city:
        qc = trie.lookup(q_city)
        rc = trie.lookup(r_city)
        if qc is not None and rc is not None:
            return math.exp(-haversine_km(qc, rc) / cfg.tau_km)
    if not r_city:
        raise EmptyString("record has no city")
    return lev_score(clean_light(q_city), clean_light(r_city))


def postal_score(p1: str, p2: str) -> float:
    """Longest common prefix length / max length."""
    if not p1 or not p2:
        raise EmptyString("postal codes must be non-empty")
    a, b = p1.strip().upper(), p2.strip().upper()
    common = 0
    for x, y in zip(a, b):
        if x != y:
            break
        common += 1
    return common / max(len(a), len(b))


def country_score(c1: str, c2: str) -> float:
    """1 if the country codes match (case-insensitive), else 0."""
    return 1.0 if c1.strip().upper() == c2.strip().upper() else 0.0


def industry_score(s1: str, s2: str) -> float:
    """SIC prefix agreement: common prefix length / max length."""
    a, b = s1.strip(), s2.strip()
    if not a or not b:
        raise EmptyString("SIC codes must be non-empty")
    if not (a.isdigit() and b.isdigit()) or len(a) > 4 or len(b) > 4:
        raise NonDigitInput(f"SIC codes must be 1-4 digits: {s1!r}, {s2!r}")
    common = 0
    for x, y in zip(a, b):
        if x != y:
            break
        common += 1
    return common / max(len(a), len(b))


def street_score(s1: str, s2: str) -> float:
    """Order-invariant token alignment score.

    Tokens are matched by the assignment maximizing the summed pairwise
    Levenshtein scores; unmatched tokens score 0; the result is the mean
    over max(token counts).
    """
    t1 = clean_light(s1).tokens()
    t2 = clean_light(s2).tokens()
    if not t1 or not t2:
        raise EmptyString("street strings must be non-empty")
    from scipy.optimize import linear_sum_assignment
    import numpy as np

    m = np.zeros((len(t1), len(t2)))
    for i, a in enumerate(t1):
        for j, b in enumerate(t2):
            m[i, j] = lev_score(CleanText.from_text(a), CleanText.from_text(b))
    rows, cols = linear_sum_assignment(-m)
    return float(m[rows, cols].sum()) / max(len(t1), len(t2))


# -- scoring tree ---------------------------------------------------------


@dataclass
class Leaf:
    """Attribute scorer bound to a query value; returns None to skip when
    the record lacks the attribute."""

    attribute: str
    scorer: Callable[[Record], Optional[float]]

    def evaluate(self, record: Record, sink: dict) -> Optional[float]:
        score = self.scorer(record)
        if score is not None:
            prev = sink.get(self.attribute)
            sink[self.attribute] = max(prev, score) if prev is not None else score
        return score


@dataclass
class SumNode:
    """Weighted sum; weights renormalized over children that produced a
    score (missing record attributes skip their leaf)."""

    children: list[tuple[float, object]]

    def evaluate(self, record: Record, sink: dict) -> Optional[float]:
        acc = 0.0
        wsum = 0.0
        for weight, child in self.children:
            score = child.evaluate(record, sink)
            if score is not None:
                acc += weight * score
                wsum += weight
        if wsum == 0.0:
            return None
        return acc / wsum


@dataclass
class MaxNode:
    children: list[object]

    def evaluate(self, record: Record, sink: dict) -> Optional[float]:
        scores = [s for s in (c.evaluate(record, sink) for c in self.children)
                  if s is not None]
        return max(scores) if scores else None


@dataclass
class ScoringTree:
    root: object

    def evaluate(self, record: Record) -> tuple[float, dict]:
        """Root score in [0, 1] plus per-attribute sub-scores."""
        sink: dict = {}
        score = self.root.evaluate(record, sink)
        return (score if score is not None else 0.0), sink


def build_scoring_tree(
    query: QueryRecord,
    strategy: Strategy = Strategy.RLS,
    cfg: ScoringConfig = ScoringConfig(),
    lex: Optional[LegalEntityLexicon] = None,
    trie: Optional[CityTrie] = None,
    query_short: Optional[str] = None,
) -> ScoringTree:
    """SUM over present attribute groups (name / address / industry) with
    configured weights; repeated attributes nest under MAX nodes; an
    address group is itself a SUM over its present sub-attributes."""
    first_city = next((a.city for a in query.addresses if a.city), None)

    def name_leaf(name: str) -> Leaf:
        def scorer(record: Record) -> Optional[float]:
            return company_name_score(
                name, record, strategy, lex=lex, trie=trie, cfg=cfg,
                query_short=query_short, query_city=first_city)
        return Leaf("name", scorer)

    name_nodes: list = [name_leaf(query.name)]
    if query.names_alt:
        name_nodes.extend(name_leaf(n) for n in query.names_alt)
    name_node = name_nodes[0] if len(name_nodes) == 1 else MaxNode(name_nodes)

    groups: list[tuple[float, object]] = [(cfg.weight_name, name_node)]

    addr_nodes = [_address_node(a, trie, cfg) for a in query.addresses
                  if not a.is_empty()]
    if addr_nodes:
        node = addr_nodes[0] if len(addr_nodes) == 1 else MaxNode(addr_nodes)
        groups.append((cfg.weight_address, node))

    sic_leaves = [_sic_leaf(s) for s in query.sics if s]
    if sic_leaves:
        node = sic_leaves[0] if len(sic_leaves) == 1 else MaxNode(sic_leaves)
        groups.append((cfg.weight_industry, node))

    return ScoringTree(SumNode(groups))


def _address_node(addr: Address, trie: Optional[CityTrie], cfg: ScoringConfig) -> SumNode:
    children: list[tuple[float, object]] = []
    if addr.street:
        children.append((1.0, Leaf(
            "street",
            lambda r, q=addr.street: street_score(q, r.street) if r.street else None)))
    if addr.postal:
        children.append((1.0, Leaf(
            "postal",
            lambda r, q=addr.postal: postal_score(q, r.postal) if r.postal else None)))
    if addr.city:
        children.append((1.0, Leaf(
            "city",
            lambda r, q=addr.city: city_score(q, r, trie, cfg) if r.city else None)))
    if addr.country:
        children.append((1.0, Leaf(
            "country",
            lambda r, q=addr.country: country_score(q, r.country) if r.country else None)))
    return SumNode(children)


def _sic_leaf(sic: str) -> Leaf:
    return Leaf("sic", lambda r, q=sic: industry_score(q, r.sic) if r.sic else None)
