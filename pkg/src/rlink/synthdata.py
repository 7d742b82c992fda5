"""Deterministic synthetic corpora: reference dataset, ground truth with
perturbed queries, short-name training pairs and a gazetteer sample.

The generators are seeded so the bundled data files can be reproduced
bit-for-bit with the `rlink synth` command.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .shortname import LabeledName, corpus_from_family
from .textnorm import LegalEntityLexicon

GENERIC_WORDS = [
    "systems", "holdings", "international", "group", "industries",
    "services", "global", "consulting", "technologies", "solutions",
    "partners", "logistics", "trading", "engineering", "capital",
    "management", "networks", "energy", "pharma", "foods",
    "construction", "maritime", "media", "analytics", "robotics",
    "textiles", "materials", "electronics", "aviation", "chemicals",
]

LEGAL_SUFFIXES = [
    "AG", "GmbH", "Inc", "Ltd", "LLC", "SA", "Corp", "Pty Ltd",
    "BV", "AB", "SARL", "SpA", "Oy", "Kft", "PLC",
]

STREET_WORDS = [
    "bahnhofstrasse", "seestrasse", "hauptstrasse", "industriering",
    "marktgasse", "parkweg", "dorfplatz", "lindenallee", "feldweg",
    "museumsquai",
]

COUNTRIES = ["CH", "DE", "AT", "FR", "IT", "US", "GB", "NL", "SE", "ES"]

REAL_CITIES = [
    ("Zurich", 47.3769, 8.5417), ("Bern", 46.9480, 7.4474),
    ("Geneva", 46.2044, 6.1432), ("Basel", 47.5596, 7.5886),
    ("Lausanne", 46.5197, 6.6323), ("Winterthur", 47.4997, 8.7241),
    ("Lucerne", 47.0502, 8.3093), ("Lugano", 46.0037, 8.9511),
    ("St Gallen", 47.4245, 9.3767), ("Biel", 47.1368, 7.2468),
    ("Berlin", 52.5200, 13.4050), ("Munich", 48.1351, 11.5820),
    ("Hamburg", 53.5511, 9.9937), ("Frankfurt", 50.1109, 8.6821),
    ("Stuttgart", 48.7758, 9.1829), ("Vienna", 48.2082, 16.3738),
    ("Paris", 48.8566, 2.3522), ("Lyon", 45.7640, 4.8357),
    ("Milan", 45.4642, 9.1900), ("Rome", 41.9028, 12.4964),
    ("Amsterdam", 52.3676, 4.9041), ("Rotterdam", 51.9244, 4.4777),
    ("London", 51.5074, -0.1278), ("Manchester", 53.4808, -2.2426),
    ("New York", 40.7128, -74.0060), ("Chicago", 41.8781, -87.6298),
    ("Stockholm", 59.3293, 18.0686), ("Madrid", 40.4168, -3.7038),
    ("Barcelona", 41.3851, 2.1734), ("Prague", 50.0755, 14.4378),
]

_ONSETS = ["b", "br", "c", "cr", "d", "dr", "f", "fl", "g", "gl", "h", "j",
           "k", "kl", "l", "m", "n", "p", "pr", "qu", "r", "s", "st", "t",
           "tr", "v", "vr", "w", "z"]
_VOWELS = ["a", "e", "i", "o", "u"]
_CODAS = ["", "l", "n", "r", "s", "x", "th", "m"]

_DIACRITIC_MAP = {"a": "ä", "o": "ö", "u": "ü", "e": "é", "i": "í"}


def _brand_word(rng: random.Random, syllables: int = 2) -> str:
    word = ""
    for _ in range(syllables):
        word += rng.choice(_ONSETS) + rng.choice(_VOWELS)
    return word + rng.choice(_CODAS)


@dataclass
class SynthRecord:
    name: str
    core: str                    # the discriminative brand token(s)
    street: str
    city: str
    postal: str
    country: str
    sic: str
    family: Optional[int] = None  # family id when part of a company family


def gen_gazetteer(n: int = 1200, seed: int = 20240101) -> list[tuple[str, float, float]]:
    rng = random.Random(seed)
    rows = list(REAL_CITIES)
    seen = {name.lower() for name, _, _ in rows}
    while len(rows) < n:
        name = (_brand_word(rng, 2) + rng.choice(["burg", "stadt", "ville",
                                                  "ton", "berg", "dorf"])).capitalize()
        if name.lower() in seen:
            continue
        seen.add(name.lower())
        rows.append((name, round(rng.uniform(-60, 70), 4),
                     round(rng.uniform(-179, 179), 4)))
    return rows


def gen_corpus(
    n: int = 10000,
    seed: int = 20240202,
    gazetteer: Optional[Sequence[tuple[str, float, float]]] = None,
    family_fraction: float = 0.12,
) -> list[SynthRecord]:
    """Reference dataset; a fraction of records belong to multi-member
    company families sharing one brand core."""
    rng = random.Random(seed)
    cities = [c for c, _, _ in (gazetteer or gen_gazetteer())]
    records: list[SynthRecord] = []
    used_cores: set[str] = set()
    family_id = 0

    def fresh_core() -> str:
        while True:
            core = _brand_word(rng, rng.choice([2, 2, 3]))
            if core not in used_cores and core not in GENERIC_WORDS:
                used_cores.add(core)
                return core

    def make_record(core: str, family: Optional[int]) -> SynthRecord:
        words = [core.capitalize()]
        words += rng.sample(GENERIC_WORDS, rng.randint(1, 3))
        name = " ".join(words)
        if rng.random() < 0.75:
            name += " " + rng.choice(LEGAL_SUFFIXES)
        city = rng.choice(cities)
        return SynthRecord(
            name=name,
            core=core,
            street=f"{rng.choice(STREET_WORDS)} {rng.randint(1, 199)}",
            city=city,
            postal=str(rng.randint(1000, 99950)),
            country=rng.choice(COUNTRIES),
            sic=str(rng.randint(100, 9999)),
            family=family,
        )

    while len(records) < n:
        if rng.random() < family_fraction and n - len(records) >= 3:
            core = fresh_core()
            size = rng.randint(2, 3)
            for _ in range(size):
                records.append(make_record(core, family_id))
            family_id += 1
        else:
            records.append(make_record(fresh_core(), None))
    return records[:n]


def corpus_cores(records: Sequence[SynthRecord]) -> set[str]:
    return {r.core for r in records}


# -- perturbations --------------------------------------------------------


def _add_diacritics(name: str, rng: random.Random, k: int = 2) -> str:
    chars = list(name)
    slots = [i for i, ch in enumerate(chars) if ch in _DIACRITIC_MAP]
    rng.shuffle(slots)
    changed = 0
    for i in slots:
        if changed >= k:
            break
        chars[i] = _DIACRITIC_MAP[chars[i]]
        changed += 1
    return "".join(chars)


def _swap_legal(name: str, rng: random.Random) -> str:
    for suffix in LEGAL_SUFFIXES:
        if name.endswith(" " + suffix):
            stem = name[: -len(suffix) - 1]
            choice = rng.random()
            if choice < 0.4:
                return stem                      # remove
            other = rng.choice([s for s in LEGAL_SUFFIXES if s != suffix])
            return f"{stem} {other}"             # replace
    return name + " " + rng.choice(LEGAL_SUFFIXES)   # add


def _permute_words(name: str, rng: random.Random) -> str:
    words = name.split()
    if len(words) < 3:
        return name
    mid = words[:-1] if words[-1] in LEGAL_SUFFIXES else words
    tail = words[len(mid):]
    shuffled = mid[:]
    rng.shuffle(shuffled)
    if shuffled == mid:
        shuffled[0], shuffled[1] = shuffled[1], shuffled[0]
    return " ".join(shuffled + tail)


def _typo(name: str, rng: random.Random) -> str:
    words = name.split()
    # prefer a typo in a generic word so the discriminative core survives
    targets = [i for i, w in enumerate(words) if w.lower() in GENERIC_WORDS]
    if not targets:
        targets = [max(range(len(words)), key=lambda i: len(words[i]))]
    i = rng.choice(targets)
    word = list(words[i])
    j = rng.randrange(len(word))
    word[j] = rng.choice("abcdefghijklmnopqrstuvwxyz")
    words[i] = "".join(word)
    return " ".join(words)


def _append_city(name: str, city: str) -> str:
    return f"{name} {city}"


PERTURBATION_MIX = [
    ("exact", 0.25),
    ("diacritic", 0.25),
    ("legal", 0.15),
    ("permute", 0.10),
    ("city", 0.10),
    ("typo", 0.15),
]


@dataclass
class TruthRow:
    name: str
    street: str = ""
    city: str = ""
    postal: str = ""
    country: str = ""
    sic: str = ""
    category: str = "MATCHED"    # MATCHED | UNMATCHED | UNDECIDED
    correct_ids: tuple[int, ...] = ()
    perturbation: str = ""


def gen_truth(
    records: Sequence[SynthRecord],
    n_matched: int = 300,
    n_unmatched: int = 100,
    n_undecided: int = 50,
    seed: int = 20240303,
) -> list[TruthRow]:
    """Perturbed queries with known correct ids plus distractors.

    Only singleton records (no family) serve as MATCHED/UNDECIDED sources
    so the correct id is unambiguous.
    """
    rng = random.Random(seed)
    singles = [i for i, r in enumerate(records) if r.family is None]
    picks = rng.sample(singles, n_matched + n_undecided)
    kinds = [k for k, _ in PERTURBATION_MIX]
    weights = [w for _, w in PERTURBATION_MIX]

    rows: list[TruthRow] = []
    for idx in picks[:n_matched]:
        rec = records[idx]
        kind = rng.choices(kinds, weights)[0]
        name, city_attr = _perturb(rec, kind, rng)
        rows.append(TruthRow(name=name, city=city_attr, category="MATCHED",
                             correct_ids=(idx,), perturbation=kind))

    used = corpus_cores(records)
    for _ in range(n_unmatched):
        while True:
            core = _brand_word(rng, rng.choice([2, 3]))
            if core not in used:
                used.add(core)
                break
        name = " ".join([core.capitalize()]
                        + rng.sample(GENERIC_WORDS, rng.randint(1, 3)))
        if rng.random() < 0.75:
            name += " " + rng.choice(LEGAL_SUFFIXES)
        rows.append(TruthRow(name=name, category="UNMATCHED",
                             perturbation="fresh"))

    for idx in picks[n_matched:]:
        rec = records[idx]
        kind = rng.choices(kinds, weights)[0]
        name, city_attr = _perturb(rec, kind, rng)
        rows.append(TruthRow(name=name, city=city_attr, category="UNDECIDED",
                             correct_ids=(idx,), perturbation=kind))
    return rows


def _perturb(rec: SynthRecord, kind: str, rng: random.Random) -> tuple[str, str]:
    city_attr = ""
    if kind == "exact":
        name = rec.name
    elif kind == "diacritic":
        name = _add_diacritics(rec.name, rng, k=rng.choice([2, 3, 3]))
        if name == rec.name:
            name = _typo(rec.name, rng)
    elif kind == "legal":
        name = _swap_legal(rec.name, rng)
    elif kind == "permute":
        name = _permute_words(rec.name, rng)
    elif kind == "city":
        name = _append_city(rec.name, rec.city)
        city_attr = rec.city
    else:
        name = _typo(rec.name, rng)
    return name, city_attr


# -- short-name corpus ----------------------------------------------------


def gen_shortname_corpus(
    records: Sequence[SynthRecord],
    lex: Optional[LegalEntityLexicon] = None,
) -> list[LabeledName]:
    """Apply the family heuristic to every generated company family."""
    lex = lex or LegalEntityLexicon.bundled()
    families: dict[int, list[str]] = {}
    for rec in records:
        if rec.family is not None:
            families.setdefault(rec.family, []).append(rec.name)
    corpus: list[LabeledName] = []
    for fam in sorted(families):
        names = families[fam]
        if len(names) >= 2:
            corpus.extend(corpus_from_family(names, lex))
    return corpus


# -- file io --------------------------------------------------------------

CORPUS_COLUMNS = ("name", "street", "city", "postal", "country", "sic")
TRUTH_COLUMNS = ("name", "street", "city", "postal", "country", "sic",
                 "category", "correct_ids", "perturbation")


def write_corpus_csv(records: Sequence[SynthRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CORPUS_COLUMNS)
        for r in records:
            writer.writerow([r.name, r.street, r.city, r.postal, r.country, r.sic])


def write_truth_csv(rows: Sequence[TruthRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRUTH_COLUMNS)
        for r in rows:
            writer.writerow([r.name, r.street, r.city, r.postal, r.country,
                             r.sic, r.category,
                             ";".join(str(i) for i in r.correct_ids),
                             r.perturbation])


def write_gazetteer_csv(rows: Sequence[tuple[str, float, float]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        for name, lat, lon in rows:
            writer.writerow([name, lat, lon])
