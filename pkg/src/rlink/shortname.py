"""Short-name extraction: corpus heuristics, a linear-chain two-label CRF
with frequency features, Viterbi prediction and per-class evaluation.

The label set is {IN, OUT}: whether a word of the company name is kept in
the short name.  Tokens are light-cleaned; the raw (pre-lowercase) tokens
feed the capitalization feature.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence
from urllib.parse import urlparse

import numpy as np

from .textnorm import LegalEntityLexicon, clean_light

IN, OUT = "IN", "OUT"
LABELS = (IN, OUT)
_LABEL_IDX = {IN: 0, OUT: 1}

MODEL_MAGIC = b"RLSM"
MODEL_VERSION = 1


class EmptyCorpus(ValueError):
    pass


@dataclass(frozen=True)
class LabeledName:
    """A tokenized company name with one IN/OUT label per token."""

    tokens: tuple[str, ...]
    labels: tuple[str, ...]
    raw_tokens: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("labeled name needs at least one token")
        if len(self.tokens) != len(self.labels):
            raise ValueError("labels must align with tokens")
        if not self.raw_tokens:
            object.__setattr__(self, "raw_tokens", self.tokens)

    def short_name(self) -> str:
        return " ".join(t for t, l in zip(self.tokens, self.labels) if l == IN)


def tokenize(raw: str) -> list[tuple[str, str]]:
    """(clean_token, raw_token) pairs; raw preserves the original casing.

    A raw piece whose punctuation splits it into several cleaned tokens
    (e.g. "A.B") is repeated as the raw side of each of them; only the
    capitalization of the first character matters downstream.
    """
    pairs: list[tuple[str, str]] = []
    for piece in raw.split():
        for c in clean_light(piece).text.split(" "):
            if c:
                pairs.append((c, piece))
    return pairs


class FrequencyTable:
    """Word -> absolute count; unknown words smooth to count 1."""

    def __init__(self, counts: Optional[dict[str, int]] = None):
        self._counts: dict[str, int] = dict(counts or {})
        self.total = sum(self._counts.values())

    def add(self, word: str, count: int = 1) -> None:
        self._counts[word] = self._counts.get(word, 0) + count
        self.total += count

    def add_text(self, text: str) -> None:
        for tok in clean_light(text).text.split():
            self.add(tok)

    def count(self, word: str) -> int:
        """Smoothed count: never below 1."""
        return max(self._counts.get(word, 0), 1)

    def __len__(self) -> int:
        return len(self._counts)

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for word in sorted(self._counts):
                fh.write(f"{word}\t{self._counts[word]}\n")

    @classmethod
    def load(cls, path: str | Path) -> "FrequencyTable":
        counts: dict[str, int] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                word, _, count = line.rpartition("\t")
                counts[word] = int(count)
        return cls(counts)


# -- corpus generation heuristics ----------------------------------------


def corpus_from_label_homepage(
    name: str,
    label: Optional[str] = None,
    homepage: Optional[str] = None,
    lex: Optional[LegalEntityLexicon] = None,
) -> list[LabeledName]:
    """Label a name from its label string or homepage domain.

    If the cleaned label is a token-subsequence of the name, those tokens
    are IN and the rest OUT; otherwise, if the homepage's registrable
    domain word matches a name token, that token is IN.  Legal-entity
    tokens are always forced OUT.  Emits up to two examples (one for the
    full name, one for the label against itself); empty list when no
    heuristic fires.
    """
    lex = lex or LegalEntityLexicon.bundled()
    pairs = tokenize(name)
    if not pairs:
        return []
    tokens = tuple(c for c, _ in pairs)
    raws = tuple(r for _, r in pairs)

    in_idx: set[int] = set()
    label_tokens: tuple[str, ...] = ()
    if label:
        label_tokens = tuple(clean_light(label).text.split())
        match = _subsequence_positions(tokens, label_tokens)
        if match is not None:
            in_idx = set(match)
    if not in_idx and homepage:
        word = _domain_word(homepage)
        if word and word in tokens:
            in_idx = {tokens.index(word)}
    if not in_idx:
        return []

    labels = tuple(
        IN if i in in_idx and not lex.is_entity_token(tokens[i]) else OUT
        for i in range(len(tokens))
    )
    if IN not in labels:
        return []
    out = [LabeledName(tokens, labels, raws)]

    if label_tokens and _subsequence_positions(tokens, label_tokens) is not None:
        lab_pairs = tokenize(label)
        lab_tokens = tuple(c for c, _ in lab_pairs)
        lab_labels = tuple(
            OUT if lex.is_entity_token(t) else IN for t in lab_tokens
        )
        if IN in lab_labels:
            out.append(LabeledName(lab_tokens, lab_labels,
                                   tuple(r for _, r in lab_pairs)))
    return out


def _subsequence_positions(
    tokens: Sequence[str], needle: Sequence[str]
) -> Optional[list[int]]:
    if not needle:
        return None
    positions = []
    start = 0
    for item in needle:
        try:
            idx = list(tokens).index(item, start)
        except ValueError:
            return None
        positions.append(idx)
        start = idx + 1
    return positions


def _domain_word(homepage: str) -> Optional[str]:
    host = urlparse(homepage if "//" in homepage else "//" + homepage).hostname
    if not host:
        return None
    parts = [p for p in host.lower().split(".") if p and p != "www"]
    return clean_light(parts[0]).text.replace(" ", "") if parts else None


def corpus_from_family(
    names: Sequence[str],
    lex: Optional[LegalEntityLexicon] = None,
) -> list[LabeledName]:
    """Common tokens of a company family (minus legal-entity tokens) are
    the short name for every member."""
    if len(names) < 2:
        raise ValueError("a family needs at least two names")
    lex = lex or LegalEntityLexicon.bundled()
    tokenized = [tokenize(n) for n in names]
    token_sets = [set(c for c, _ in pairs) for pairs in tokenized]
    common = set.intersection(*token_sets) if token_sets else set()
    common = {t for t in common if not lex.is_entity_token(t)}
    if not common:
        return []
    out = []
    for pairs in tokenized:
        tokens = tuple(c for c, _ in pairs)
        labels = tuple(IN if t in common else OUT for t in tokens)
        out.append(LabeledName(tokens, labels, tuple(r for _, r in pairs)))
    return out


# -- features -------------------------------------------------------------


@dataclass(frozen=True)
class TokenFeatures:
    word: str
    capitalized: bool
    suffix2: str
    suffix3: str
    rank: int              # 1 = rarest within the name
    norm_freq: float       # count / max count within the name
    freq_bucket: int       # log10-scale bucket of the absolute count


def extract_features(
    tokens: Sequence[str],
    raw_tokens: Sequence[str],
    freq: FrequencyTable,
) -> list[TokenFeatures]:
    """Per-token features; rank is a permutation of 1..n with ties broken
    by token position."""
    if not tokens:
        raise ValueError("feature extraction needs at least one token")
    counts = [freq.count(t) for t in tokens]
    order = sorted(range(len(tokens)), key=lambda i: (counts[i], i))
    rank = [0] * len(tokens)
    for r, i in enumerate(order, start=1):
        rank[i] = r
    max_count = max(counts)
    feats = []
    for i, tok in enumerate(tokens):
        raw = raw_tokens[i] if i < len(raw_tokens) else tok
        feats.append(TokenFeatures(
            word=tok,
            capitalized=bool(raw[:1].isupper()),
            suffix2=tok[-2:],
            suffix3=tok[-3:],
            rank=rank[i],
            norm_freq=counts[i] / max_count,
            freq_bucket=int(math.log10(counts[i])),
        ))
    return feats


def _nf_bin(nf: float) -> int:
    for i, edge in enumerate((0.001, 0.01, 0.1, 0.5)):
        if nf <= edge:
            return i
    return 4


def _indicator_strings(f: TokenFeatures, prefix: str = "") -> list[str]:
    return [
        f"{prefix}w={f.word}",
        f"{prefix}cap={f.capitalized}",
        f"{prefix}suf2={f.suffix2}",
        f"{prefix}suf3={f.suffix3}",
        f"{prefix}rank={min(f.rank, 5)}",
        f"{prefix}nf={_nf_bin(f.norm_freq)}",
        f"{prefix}af={f.freq_bucket}",
    ]


def sequence_features(
    tokens: Sequence[str],
    raw_tokens: Sequence[str],
    freq: FrequencyTable,
) -> list[list[str]]:
    """Indicator feature strings per token, including neighbor context."""
    feats = extract_features(tokens, raw_tokens, freq)
    out = []
    for i in range(len(feats)):
        cur = _indicator_strings(feats[i])
        cur.append("bias")
        if i == 0:
            cur.append("BOS")
        else:
            cur.extend(_indicator_strings(feats[i - 1], "l:"))
        if i == len(feats) - 1:
            cur.append("EOS")
        else:
            cur.extend(_indicator_strings(feats[i + 1], "r:"))
        out.append(cur)
    return out


# -- model ----------------------------------------------------------------


@dataclass
class Hyper:
    epochs: int = 20
    learning_rate: float = 0.5
    l2: float = 1.0
    seed: int = 42


class ShortNameModel:
    """Linear-chain CRF over {IN, OUT} with indicator emission features."""

    def __init__(
        self,
        feature_index: dict[str, int],
        weights: np.ndarray,          # (F, 2)
        transitions: np.ndarray,      # (2, 2) from -> to
        meta: Optional[dict] = None,
    ):
        self.feature_index = feature_index
        self.weights = weights
        self.transitions = transitions
        self.meta = meta or {}

    # scores[t, y] = sum of emission weights of active features
    def _emissions(self, seq_feats: list[list[str]]) -> np.ndarray:
        scores = np.zeros((len(seq_feats), 2))
        for t, feats in enumerate(seq_feats):
            for f in feats:
                idx = self.feature_index.get(f)
                if idx is not None:
                    scores[t] += self.weights[idx]
        return scores

    def viterbi(self, seq_feats: list[list[str]]) -> list[str]:
        em = self._emissions(seq_feats)
        n = len(seq_feats)
        delta = em[0].copy()
        back = np.zeros((n, 2), dtype=int)
        for t in range(1, n):
            cand = delta[:, None] + self.transitions
            back[t] = cand.argmax(axis=0)
            delta = cand.max(axis=0) + em[t]
        path = [int(delta.argmax())]
        for t in range(n - 1, 0, -1):
            path.append(int(back[t, path[-1]]))
        path.reverse()
        return [LABELS[i] for i in path]

    # -- persistence: versioned binary ---------------------------------

    def write(self, path: str | Path) -> None:
        feats = sorted(self.feature_index, key=self.feature_index.get)
        with open(path, "wb") as fh:
            fh.write(MODEL_MAGIC)
            meta_epochs = int(self.meta.get("epochs", 0))
            meta_seed = int(self.meta.get("seed", 0))
            fh.write(struct.pack("<HQqq", MODEL_VERSION, len(feats),
                                 meta_epochs, meta_seed))
            for f in feats:
                data = f.encode("utf-8")
                fh.write(struct.pack("<H", len(data)))
                fh.write(data)
            fh.write(self.weights.astype("<f8").tobytes())
            fh.write(self.transitions.astype("<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "ShortNameModel":
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:4] != MODEL_MAGIC:
            raise ValueError("not a short-name model file")
        version, nfeats, epochs, seed = struct.unpack_from("<HQqq", data, 4)
        if version != MODEL_VERSION:
            raise ValueError(f"unsupported model version {version}")
        pos = 4 + struct.calcsize("<HQqq")
        feats = []
        for _ in range(nfeats):
            (length,) = struct.unpack_from("<H", data, pos)
            pos += 2
            feats.append(data[pos:pos + length].decode("utf-8"))
            pos += length
        weights = np.frombuffer(data, dtype="<f8", count=nfeats * 2,
                                offset=pos).reshape(nfeats, 2).copy()
        pos += nfeats * 2 * 8
        transitions = np.frombuffer(data, dtype="<f8", count=4,
                                    offset=pos).reshape(2, 2).copy()
        return cls({f: i for i, f in enumerate(feats)}, weights, transitions,
                   {"epochs": epochs, "seed": seed})


def train(
    corpus: Sequence[LabeledName],
    freq: FrequencyTable,
    hyper: Hyper = Hyper(),
) -> tuple[ShortNameModel, list[float]]:
    """Gradient ascent on the L2-regularized conditional log-likelihood.

    Deterministic (zero init, fixed iteration order); returns the model
    and the per-epoch negative log-likelihood trace.
    """
    if not corpus:
        raise EmptyCorpus("training corpus is empty")

    sequences = [sequence_features(ex.tokens, ex.raw_tokens, freq)
                 for ex in corpus]
    feature_index: dict[str, int] = {}
    indexed: list[list[list[int]]] = []
    for seq in sequences:
        idx_seq = []
        for feats in seq:
            idx_seq.append([feature_index.setdefault(f, len(feature_index))
                            for f in feats])
        indexed.append(idx_seq)
    gold = [[_LABEL_IDX[l] for l in ex.labels] for ex in corpus]

    F = len(feature_index)
    weights = np.zeros((F, 2))
    transitions = np.zeros((2, 2))
    n = len(corpus)
    lr = hyper.learning_rate
    losses: list[float] = []

    for _epoch in range(hyper.epochs):
        grad_w = np.zeros_like(weights)
        grad_t = np.zeros_like(transitions)
        nll = 0.0
        for idx_seq, labels in zip(indexed, gold):
            nll += _accumulate_gradient(idx_seq, labels, weights, transitions,
                                        grad_w, grad_t)
        grad_w -= hyper.l2 * weights
        grad_t -= hyper.l2 * transitions
        nll += 0.5 * hyper.l2 * (float((weights ** 2).sum())
                                 + float((transitions ** 2).sum()))
        weights += lr * grad_w / n
        transitions += lr * grad_t / n
        losses.append(nll / n)

    model = ShortNameModel(feature_index, weights, transitions,
                           {"epochs": hyper.epochs, "seed": hyper.seed})
    return model, losses


def _accumulate_gradient(idx_seq, labels, weights, transitions, grad_w, grad_t):
    """Add (observed - expected) feature counts; return the sequence NLL."""
    n = len(idx_seq)
    em = np.zeros((n, 2))
    for t, feats in enumerate(idx_seq):
        for f in feats:
            em[t] += weights[f]

    # forward-backward in log space
    alpha = np.zeros((n, 2))
    alpha[0] = em[0]
    for t in range(1, n):
        alpha[t] = em[t] + _logsumexp_cols(alpha[t - 1][:, None] + transitions)
    beta = np.zeros((n, 2))
    for t in range(n - 2, -1, -1):
        beta[t] = _logsumexp_cols((transitions + em[t + 1] + beta[t + 1]).T)
    log_z = _logsumexp(alpha[-1])

    # gold score
    gold_score = sum(em[t, labels[t]] for t in range(n))
    gold_score += sum(transitions[labels[t - 1], labels[t]] for t in range(1, n))

    # emission expectations
    for t, feats in enumerate(idx_seq):
        post = np.exp(alpha[t] + beta[t] - log_z)
        for f in feats:
            grad_w[f, labels[t]] += 1.0
            grad_w[f] -= post
    # transition expectations
    for t in range(1, n):
        pair = alpha[t - 1][:, None] + transitions + em[t] + beta[t]
        grad_t += -np.exp(pair - log_z)
        grad_t[labels[t - 1], labels[t]] += 1.0

    return log_z - gold_score


def _logsumexp(v: np.ndarray) -> float:
    m = v.max()
    return float(m + np.log(np.exp(v - m).sum()))


def _logsumexp_cols(m: np.ndarray) -> np.ndarray:
    mx = m.max(axis=0)
    return mx + np.log(np.exp(m - mx).sum(axis=0))


def predict(name: str, model: ShortNameModel, freq: FrequencyTable) -> str:
    """Viterbi-decode the name; concatenate IN tokens in order.

    If everything decodes OUT, fall back to the token with the minimum
    normalized frequency.
    """
    pairs = tokenize(name)
    if not pairs:
        raise ValueError(f"cannot predict a short name for {name!r}")
    tokens = [c for c, _ in pairs]
    raws = [r for _, r in pairs]
    seq = sequence_features(tokens, raws, freq)
    labels = model.viterbi(seq)
    kept = [t for t, l in zip(tokens, labels) if l == IN]
    if kept:
        return " ".join(kept)
    counts = [freq.count(t) for t in tokens]
    return tokens[min(range(len(tokens)), key=lambda i: (counts[i], i))]


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class EvalResult:
    per_class: dict[str, ClassMetrics]
    micro: ClassMetrics
    macro: ClassMetrics


def evaluate(
    model: ShortNameModel,
    corpus: Sequence[LabeledName],
    freq: FrequencyTable,
) -> EvalResult:
    """Token-level precision/recall/F1 per class plus micro/macro averages."""
    if not corpus:
        raise EmptyCorpus("evaluation corpus is empty")
    tp = {l: 0 for l in LABELS}
    fp = {l: 0 for l in LABELS}
    fn = {l: 0 for l in LABELS}
    support = {l: 0 for l in LABELS}
    for ex in corpus:
        seq = sequence_features(ex.tokens, ex.raw_tokens, freq)
        pred = model.viterbi(seq)
        for p, g in zip(pred, ex.labels):
            support[g] += 1
            if p == g:
                tp[g] += 1
            else:
                fp[p] += 1
                fn[g] += 1

    def _metrics(t, f_p, f_n, sup) -> ClassMetrics:
        prec = t / (t + f_p) if t + f_p else 0.0
        rec = t / (t + f_n) if t + f_n else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        return ClassMetrics(prec, rec, f1, sup)

    per_class = {l: _metrics(tp[l], fp[l], fn[l], support[l]) for l in LABELS}
    micro = _metrics(sum(tp.values()), sum(fp.values()), sum(fn.values()),
                     sum(support.values()))
    macro = ClassMetrics(
        sum(m.precision for m in per_class.values()) / len(LABELS),
        sum(m.recall for m in per_class.values()) / len(LABELS),
        sum(m.f1 for m in per_class.values()) / len(LABELS),
        sum(support.values()),
    )
    return EvalResult(per_class, micro, macro)


def min_freq_statistic(corpus: Sequence[LabeledName], freq: FrequencyTable) -> float:
    """Fraction of names whose minimum-relative-frequency token is IN."""
    if not corpus:
        raise EmptyCorpus("corpus is empty")
    hits = 0
    for ex in corpus:
        counts = [freq.count(t) for t in ex.tokens]
        i = min(range(len(ex.tokens)), key=lambda k: (counts[k], k))
        if ex.labels[i] == IN:
            hits += 1
    return hits / len(corpus)


# -- corpus file io -------------------------------------------------------


def write_corpus(corpus: Iterable[LabeledName], path: str | Path) -> None:
    """One example per line, `token/LABEL` pairs space-separated."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in corpus:
            fh.write(" ".join(f"{t}/{l}" for t, l in zip(ex.tokens, ex.labels)))
            fh.write("\n")


def load_corpus(path: str | Path) -> list[LabeledName]:
    corpus = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            tokens, labels = [], []
            for pair in line.split(" "):
                tok, _, label = pair.rpartition("/")
                tokens.append(tok)
                labels.append(label)
            corpus.append(LabeledName(tuple(tokens), tuple(labels)))
    return corpus
