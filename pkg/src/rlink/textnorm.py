"""Text cleaning, Unicode handling, legal-entity detection and bigram shingling.

Two cleaning levels exist:

* :func:`clean_light` keeps combining characters (decomposed form) so that
  scoring can down-weight diacritics rather than discard them.
* :func:`clean_blocking` is the aggressive variant used only to compute
  blocking keys: diacritics dropped, legal entity types removed, acronym
  and number fragments merged.

All functions here are pure; the lexicon is read-only after load.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence


def _is_mark(ch: str) -> bool:
    return unicodedata.category(ch).startswith("M")


@dataclass(frozen=True)
class CleanText:
    """Light-cleaned text in decomposed (NFD) form.

    ``combining_marks`` holds the indices of combining characters within
    ``text``; blocking-cleaned text never contains any.
    """

    text: str
    combining_marks: tuple[int, ...] = ()

    @classmethod
    def from_text(cls, text: str) -> "CleanText":
        """Wrap already-cleaned text, recomputing combining-mark positions."""
        return cls(text, tuple(i for i, ch in enumerate(text) if _is_mark(ch)))

    def __bool__(self) -> bool:
        return bool(self.text)

    def tokens(self) -> list[str]:
        return self.text.split(" ") if self.text else []

    def graphemes(self) -> tuple[str, ...]:
        """Group each base character with its trailing combining marks.

        A space is its own unit.  This is the unit sequence used by the
        similarity scorers, so that e.g. a 4-letter umlauted name has
        length 4, not 5.
        """
        units: list[str] = []
        for ch in self.text:
            if units and _is_mark(ch):
                units[-1] += ch
            else:
                units.append(ch)
        return tuple(units)


@dataclass(frozen=True)
class Span:
    """Token span [start, end) within a token list."""

    start: int
    end: int


class LegalEntityLexicon:
    """Lowercase legal-entity-type tokens and multi-token phrases.

    Entries are stored light-cleaned; lookup is longest-match-first so a
    multi-token entry ("pty ltd") shadows its suffix tokens ("ltd").
    """

    def __init__(self, entries: Iterable[str]):
        cleaned = set()
        for raw in entries:
            toks = tuple(clean_light(raw).text.split())
            if toks:
                cleaned.add(toks)
        self._entries: frozenset[tuple[str, ...]] = frozenset(cleaned)
        self._max_len = max((len(e) for e in self._entries), default=0)
        self._tokens = frozenset(t for e in self._entries for t in e)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, phrase: Sequence[str]) -> bool:
        return tuple(phrase) in self._entries

    @property
    def max_phrase_len(self) -> int:
        return self._max_len

    def is_entity_token(self, token: str) -> bool:
        """True if the token appears in any lexicon entry."""
        return token in self._tokens

    @classmethod
    def from_file(cls, path: str | Path) -> "LegalEntityLexicon":
        """Load a lexicon file: UTF-8, one entry per line, ``#`` comments."""
        entries = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if line:
                    entries.append(line)
        return cls(entries)

    @classmethod
    def bundled(cls) -> "LegalEntityLexicon":
        """The lexicon snapshot shipped with the package (~200 entries)."""
        text = resources.files("rlink.data").joinpath("legal_entities.txt").read_text("utf-8")
        entries = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
        return cls(e for e in entries if e)


def clean_light(raw: str) -> CleanText:
    """Decompose, lowercase, punctuation to spaces, collapse, trim.

    Combining characters are retained and indexed.  Idempotent.
    """
    decomposed = unicodedata.normalize("NFD", raw).lower()
    parts: list[str] = []
    for ch in decomposed:
        if ch.isalnum():
            parts.append(ch)
        elif _is_mark(ch):
            # orphan marks (following punctuation) are dropped
            if parts and parts[-1] != " ":
                parts.append(ch)
        else:
            if parts and parts[-1] != " ":
                parts.append(" ")
    while parts and parts[-1] == " ":
        parts.pop()
    text = "".join(parts)
    marks = tuple(i for i, ch in enumerate(text) if _is_mark(ch))
    return CleanText(text, marks)


def detect_legal_entity_spans(tokens: Sequence[str], lex: LegalEntityLexicon) -> list[Span]:
    """Non-overlapping spans covering every maximal lexicon match.

    Deterministic: longest match, leftmost-first.
    """
    spans: list[Span] = []
    i = 0
    n = len(tokens)
    while i < n:
        matched = 0
        for width in range(min(lex.max_phrase_len, n - i), 0, -1):
            if tuple(tokens[i:i + width]) in lex:
                matched = width
                break
        if matched:
            spans.append(Span(i, i + matched))
            i += matched
        else:
            i += 1
    return spans


def strip_marks(ct: CleanText) -> str:
    """Remove all combining characters from light-cleaned text."""
    return "".join(ch for ch in ct.text if not _is_mark(ch))


def clean_blocking(raw: str, lex: LegalEntityLexicon) -> CleanText:
    """Aggressive cleaning used only for blocking-key computation.

    On top of :func:`clean_light`: combining marks dropped, legal-entity
    tokens removed, runs of single-character tokens merged (acronyms),
    runs of digit groups merged.  Never stored as a display name.
    """
    tokens = strip_marks(clean_light(raw)).split()
    # iterate to a fixpoint: merging acronym runs can itself form a
    # lexicon token (e.g. "a e" -> "ae"), which must also be removed
    while True:
        spans = detect_legal_entity_spans(tokens, lex)
        drop = {i for s in spans for i in range(s.start, s.end)}
        tokens = [t for i, t in enumerate(tokens) if i not in drop]
        merged = _merge_runs(tokens, lambda t: len(t) == 1)
        merged = _merge_runs(merged, str.isdigit)
        if merged == tokens and not drop:
            break
        tokens = merged
    return CleanText(" ".join(tokens))


def _merge_runs(tokens: list[str], pred) -> list[str]:
    """Concatenate maximal runs of >= 2 consecutive tokens matching pred."""
    out: list[str] = []
    i = 0
    while i < len(tokens):
        if pred(tokens[i]):
            j = i
            while j < len(tokens) and pred(tokens[j]):
                j += 1
            if j - i >= 2:
                out.append("".join(tokens[i:j]))
            else:
                out.append(tokens[i])
            i = j
        else:
            out.append(tokens[i])
            i += 1
    return out


def shingle_bigrams(ct: CleanText) -> frozenset[str]:
    """Set of consecutive character 2-grams, spaces stripped beforehand.

    Units are graphemes (base char + combining marks), so an accented
    character counts as one shingle element.  A 1-unit input yields that
    unit as a unigram shingle; empty input yields the empty set.
    """
    units = [g for g in ct.graphemes() if g != " "]
    if not units:
        return frozenset()
    if len(units) == 1:
        return frozenset(units)
    return frozenset(units[i] + units[i + 1] for i in range(len(units) - 1))
