"""Rule-based and ML-based document quality filtering.

Three families, applied in pipeline order: line-wise corrections (URL lines,
long words, whitespace standardization), document-wise heuristics (repetition,
length, character-ratio outliers), and model-based scores (n-gram LM
perplexity, bigram logistic quality classifier).
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import unicodedata
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import Document

UNK_TOKEN = "<unk>"

# Drop reasons double as the rule-name enum carried in meta.drop_reason.
DROP_REASONS = (
    "line_dup_frac",
    "para_dup_frac",
    "ngram2_dup_frac",
    "ngram3_dup_frac",
    "ngram4_dup_frac",
    "min_doc_chars",
    "max_doc_chars",
    "symbol_to_word_ratio",
    "ellipsis_line_frac",
    "invisible_char_frac",
    "digit_frac",
    "date_like_frac",
    "perplexity",
    "quality_score",
)

_DATE_LIKE = re.compile(r"^\(?\d{1,4}[-/.]\d{1,2}([-/.]\d{1,4})?\)?[.,;:]?$")
_SYMBOL_CHARS = frozenset("#…")


@dataclass
class FilterRules:
    """Thresholds for the heuristic document filters. Fractions live in [0,1]."""

    max_line_dup_frac: float = 0.30
    max_para_dup_frac: float = 0.30
    max_ngram_dup_frac: Dict[int, float] = field(
        default_factory=lambda: {2: 0.20, 3: 0.18, 4: 0.16}
    )
    min_doc_chars: int = 50
    max_doc_chars: int = 1_000_000
    max_symbol_to_word_ratio: float = 0.10
    max_ellipsis_line_frac: float = 0.30
    max_invisible_char_frac: float = 0.01
    max_digit_frac: float = 0.20
    max_date_like_frac: float = 0.10
    max_word_length: int = 1000
    url_pattern: str = r"https?://\S+|www\.\S+"

    def __post_init__(self):
        for name in (
            "max_line_dup_frac", "max_para_dup_frac", "max_symbol_to_word_ratio",
            "max_ellipsis_line_frac", "max_invisible_char_frac", "max_digit_frac",
            "max_date_like_frac",
        ):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")
        for n, value in self.max_ngram_dup_frac.items():
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"max_ngram_dup_frac[{n}]={value} outside [0, 1]")
        if self.min_doc_chars > self.max_doc_chars:
            raise ValueError("min_doc_chars > max_doc_chars")

    def to_json(self) -> dict:
        obj = vars(self).copy()
        obj["max_ngram_dup_frac"] = {str(n): v for n, v in self.max_ngram_dup_frac.items()}
        return obj

    @staticmethod
    def from_json(obj: dict) -> "FilterRules":
        obj = dict(obj)
        if "max_ngram_dup_frac" in obj:
            obj["max_ngram_dup_frac"] = {int(n): v for n, v in obj["max_ngram_dup_frac"].items()}
        return FilterRules(**obj)


@dataclass(frozen=True)
class RepetitionProfile:
    line_dup_frac: float
    para_dup_frac: float
    ngram_dup_frac: Dict[int, float]


def _dup_mass_fraction(units: Sequence[str]) -> float:
    """Character mass of repeated units (occurrences beyond the first) over
    the total character mass of all units."""
    total = 0
    duplicated = 0
    seen = set()
    for unit in units:
        mass = len(unit)
        total += mass
        if unit in seen:
            duplicated += mass
        else:
            seen.add(unit)
    return duplicated / total if total else 0.0


def repetition_profile(text: str, n_values: Sequence[int] = (2, 3, 4)) -> RepetitionProfile:
    """Duplicated-character-mass fractions for lines, paragraphs, and word n-grams."""
    lines = [l.strip() for l in text.split("\n") if l.strip()]
    paragraphs = [p.strip() for p in re.split(r"\n\s*\n", text) if p.strip()]
    tokens = text.split()
    ngram_fracs: Dict[int, float] = {}
    for n in n_values:
        grams = [" ".join(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]
        ngram_fracs[n] = _dup_mass_fraction(grams)
    return RepetitionProfile(
        line_dup_frac=_dup_mass_fraction(lines),
        para_dup_frac=_dup_mass_fraction(paragraphs),
        ngram_dup_frac=ngram_fracs,
    )


@dataclass(frozen=True)
class FilterDecision:
    keep: bool
    reason: Optional[str] = None

    def __bool__(self) -> bool:
        return self.keep


KEEP = FilterDecision(keep=True)


def _invisible_frac(text: str) -> float:
    if not text:
        return 0.0
    invisible = sum(
        1 for c in text
        if c not in "\n\t\r " and unicodedata.category(c) in ("Cc", "Cf")
    )
    return invisible / len(text)


def _digit_frac(text: str) -> float:
    chars = [c for c in text if not c.isspace()]
    if not chars:
        return 0.0
    return sum(1 for c in chars if c.isdigit()) / len(chars)


def apply_document_filters(doc: Document, rules: FilterRules) -> FilterDecision:
    """Document-wise outlier filtering. Evaluation order is fixed: repetition,
    then length, then character/token ratios; the reason names the first
    violated rule."""
    text = doc.text
    profile = repetition_profile(text, sorted(rules.max_ngram_dup_frac))
    if profile.line_dup_frac > rules.max_line_dup_frac:
        return FilterDecision(False, "line_dup_frac")
    if profile.para_dup_frac > rules.max_para_dup_frac:
        return FilterDecision(False, "para_dup_frac")
    for n in sorted(rules.max_ngram_dup_frac):
        if profile.ngram_dup_frac[n] > rules.max_ngram_dup_frac[n]:
            return FilterDecision(False, f"ngram{n}_dup_frac")

    if len(text) < rules.min_doc_chars:
        return FilterDecision(False, "min_doc_chars")
    if len(text) > rules.max_doc_chars:
        return FilterDecision(False, "max_doc_chars")

    words = text.split()
    symbol_count = sum(1 for c in text if c in _SYMBOL_CHARS) + text.count("...")
    if symbol_count / max(1, len(words)) > rules.max_symbol_to_word_ratio:
        return FilterDecision(False, "symbol_to_word_ratio")

    lines = [l.strip() for l in text.split("\n") if l.strip()]
    if lines:
        ellipsis = sum(1 for l in lines if l.endswith("...") or l.endswith("…"))
        if ellipsis / len(lines) > rules.max_ellipsis_line_frac:
            return FilterDecision(False, "ellipsis_line_frac")

    if _invisible_frac(text) > rules.max_invisible_char_frac:
        return FilterDecision(False, "invisible_char_frac")
    if _digit_frac(text) > rules.max_digit_frac:
        return FilterDecision(False, "digit_frac")

    if words:
        date_like = sum(1 for w in words if _DATE_LIKE.match(w))
        if date_like / len(words) > rules.max_date_like_frac:
            return FilterDecision(False, "date_like_frac")

    return KEEP


def apply_line_corrections(doc: Document, rules: FilterRules) -> Document:
    """Line-wise corrections: drop URL lines, drop overlong words, collapse
    whitespace runs, trim lines. Idempotent."""
    url_re = re.compile(rules.url_pattern)
    out_lines = []
    for line in doc.text.split("\n"):
        if url_re.search(line):
            continue
        words = [w for w in line.split() if len(w) <= rules.max_word_length]
        out_lines.append(" ".join(words))
    return doc.with_text("\n".join(out_lines))


def filter_documents(
    docs: Iterable[Document],
    rules: FilterRules,
) -> Tuple[List[Document], List[Document]]:
    """Corrections followed by document filters; partitions input into
    (kept, dropped-with-reason)."""
    kept: List[Document] = []
    dropped: List[Document] = []
    for doc in docs:
        corrected = apply_line_corrections(doc, rules)
        decision = apply_document_filters(corrected, rules)
        if decision.keep:
            kept.append(corrected)
        else:
            dropped.append(doc.with_meta(drop_reason=decision.reason))
    return kept, dropped


# ---------------------------------------------------------------------------
# n-gram LM with interpolated absolute discounting, for perplexity filtering
# ---------------------------------------------------------------------------


@dataclass
class NGramLM:
    """Token n-gram LM, interpolated absolute discounting with fixed discount.

    Conditional distributions sum to 1 over the closed vocabulary (training
    tokens plus the unknown token).
    """

    order: int
    discount: float
    vocab: set
    # counts[k][context tuple] = (total, {token: count}), k = context length
    counts: List[Dict[Tuple[str, ...], Tuple[int, Dict[str, int]]]]
    total_tokens: int

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def _map(self, token: str) -> str:
        return token if token in self.vocab else UNK_TOKEN

    def prob(self, token: str, context: Sequence[str] = ()) -> float:
        """P(token | context) with backoff interpolation down to unigrams."""
        token = self._map(token)
        context = tuple(self._map(t) for t in context[max(0, len(context) - self.order + 1):])
        return self._prob(token, context)

    def _prob(self, token: str, context: Tuple[str, ...]) -> float:
        d = self.discount
        if not context:
            total = self.total_tokens
            _, unigrams = self.counts[0][()]
            count = unigrams.get(token, 0)
            n_types = len(unigrams)
            return max(count - d, 0.0) / total + (d * n_types / total) * (1.0 / self.vocab_size)
        entry = self.counts[len(context)].get(context)
        lower = self._prob(token, context[1:])
        if entry is None:
            return lower
        total, continuations = entry
        count = continuations.get(token, 0)
        lam = d * len(continuations) / total
        return max(count - d, 0.0) / total + lam * lower

    def logprob_tokens(self, tokens: Sequence[str]) -> float:
        logp = 0.0
        for i, tok in enumerate(tokens):
            ctx = tuple(tokens[max(0, i - self.order + 1):i])
            logp += math.log(self.prob(tok, ctx))
        return logp

    def save(self, path) -> None:
        payload = {
            "version": 1,
            "order": self.order,
            "discount": self.discount,
            "vocab": sorted(self.vocab),
            "total_tokens": self.total_tokens,
            "counts": [
                {"\x1f".join(ctx): [total, conts] for ctx, (total, conts) in table.items()}
                for table in self.counts
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, ensure_ascii=False)

    @staticmethod
    def load(path) -> "NGramLM":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        counts = []
        for table in payload["counts"]:
            parsed = {}
            for ctx_key, (total, conts) in table.items():
                ctx = tuple(ctx_key.split("\x1f")) if ctx_key else ()
                parsed[ctx] = (total, conts)
            counts.append(parsed)
        return NGramLM(
            order=payload["order"],
            discount=payload["discount"],
            vocab=set(payload["vocab"]),
            counts=counts,
            total_tokens=payload["total_tokens"],
        )


def train_quality_lm(
    corpus: Iterable[str],
    order: int = 3,
    discount: float = 0.75,
) -> NGramLM:
    """Train the perplexity-filtering LM on a gold-standard corpus."""
    if order < 2:
        raise ValueError("order must be >= 2")
    if not 0.0 < discount < 1.0:
        raise ValueError("discount must be in (0, 1)")

    counts: List[Dict[Tuple[str, ...], list]] = [dict() for _ in range(order)]
    total_tokens = 0
    for text in corpus:
        tokens = text.split()
        total_tokens += len(tokens)
        for i, tok in enumerate(tokens):
            for width in range(min(i, order - 1) + 1):
                ctx = tuple(tokens[i - width:i])
                entry = counts[width].get(ctx)
                if entry is None:
                    entry = [0, {}]
                    counts[width][ctx] = entry
                entry[0] += 1
                entry[1][tok] = entry[1].get(tok, 0) + 1
    if total_tokens == 0:
        raise ValueError("empty training corpus")

    vocab = set(counts[0][()][1]) | {UNK_TOKEN}
    frozen = [
        {ctx: (total, conts) for ctx, (total, conts) in table.items()}
        for table in counts
    ]
    return NGramLM(
        order=order,
        discount=discount,
        vocab=vocab,
        counts=frozen,
        total_tokens=total_tokens,
    )


def perplexity(lm: NGramLM, text: str) -> float:
    """exp(-mean token log-prob); unknown tokens map to the unknown symbol."""
    tokens = text.split()
    if not tokens:
        raise ValueError("cannot compute perplexity of empty text")
    return math.exp(-lm.logprob_tokens(tokens) / len(tokens))


def perplexity_threshold(lm: NGramLM, held_out: Sequence[str], percentile: float = 90.0) -> float:
    """Perplexity cutoff at the given percentile of a held-out gold sample."""
    ppls = sorted(perplexity(lm, t) for t in held_out if t.split())
    if not ppls:
        raise ValueError("no scorable held-out texts")
    return float(np.percentile(ppls, percentile))


# ---------------------------------------------------------------------------
# Hashed-bigram logistic quality classifier
# ---------------------------------------------------------------------------


def _hash_feature(key: str, dim: int) -> int:
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


def _doc_features(text: str, dim: int) -> Dict[int, float]:
    """Frequency-normalized hashed unigram+bigram bag. Bigrams stay within
    lines, so repeating a document's lines scales all counts uniformly and the
    normalized features (hence the score) are unchanged."""
    feats: Dict[int, float] = {}
    total = 0
    for line in text.lower().split("\n"):
        tokens = line.split()
        for i, tok in enumerate(tokens):
            for key in ([tok] if i == 0 else [tok, tokens[i - 1] + "\x1f" + tok]):
                h = _hash_feature(key, dim)
                feats[h] = feats.get(h, 0.0) + 1.0
                total += 1
    if total:
        for k in feats:
            feats[k] /= total
    return feats


@dataclass
class QualityClassifier:
    hash_dim: int
    weights: np.ndarray
    bias: float
    seed: int
    training_losses: List[float] = field(default_factory=list)

    def save(self, path) -> None:
        np.savez(
            path,
            weights=self.weights,
            bias=np.float64(self.bias),
            hash_dim=np.int64(self.hash_dim),
            seed=np.int64(self.seed),
        )

    @staticmethod
    def load(path) -> "QualityClassifier":
        data = np.load(path)
        return QualityClassifier(
            hash_dim=int(data["hash_dim"]),
            weights=data["weights"],
            bias=float(data["bias"]),
            seed=int(data["seed"]),
        )


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def _logistic_loss(examples, weights, bias) -> float:
    loss = 0.0
    for feats, label in examples:
        z = bias + sum(weights[k] * v for k, v in feats.items())
        p = _sigmoid(z)
        p = min(max(p, 1e-12), 1.0 - 1e-12)
        loss -= label * math.log(p) + (1 - label) * math.log(1 - p)
    return loss / len(examples)


def train_quality_classifier(
    positives: Sequence[str],
    negatives: Sequence[str],
    hash_dim: int = 1 << 20,
    epochs: int = 10,
    lr: float = 0.5,
    seed: int = 0,
) -> QualityClassifier:
    """Averaged SGD on logistic loss over hashed bigram features."""
    if not positives or not negatives:
        raise ValueError("both positive and negative classes must be nonempty")

    examples = [(_doc_features(t, hash_dim), 1) for t in positives]
    examples += [(_doc_features(t, hash_dim), 0) for t in negatives]

    rng = np.random.default_rng(seed)
    weights = np.zeros(hash_dim, dtype=np.float64)
    bias = 0.0
    avg_weights = np.zeros_like(weights)
    avg_bias = 0.0
    steps = 0
    losses: List[float] = []

    for epoch in range(epochs):
        order = rng.permutation(len(examples))
        step_lr = lr / (1.0 + epoch)
        for idx in order:
            feats, label = examples[idx]
            z = bias + sum(weights[k] * v for k, v in feats.items())
            grad = _sigmoid(z) - label
            for k, v in feats.items():
                weights[k] -= step_lr * grad * v
            bias -= step_lr * grad
            avg_weights += weights
            avg_bias += bias
            steps += 1
        losses.append(_logistic_loss(examples, weights, bias))

    avg_weights /= steps
    avg_bias /= steps
    clf = QualityClassifier(
        hash_dim=hash_dim, weights=avg_weights, bias=avg_bias, seed=seed,
        training_losses=losses,
    )
    return clf


def quality_score(clf: QualityClassifier, doc: Document) -> float:
    """Logistic score in [0, 1]; an empty document scores the bias alone."""
    feats = _doc_features(doc.text, clf.hash_dim)
    z = clf.bias + sum(clf.weights[k] * v for k, v in feats.items())
    return _sigmoid(z)
