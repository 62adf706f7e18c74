"""Character n-gram language identification with confidence scores."""

from __future__ import annotations

import gzip
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

from .corpus import Document

MAGIC = b"PFLI1\n"

# Character standing in for anything unseen at training time.
UNK_CHAR = "\x00"

# Below this many characters the n-gram evidence is weak; confidence is capped.
SHORT_TEXT_CHARS = 20
SHORT_TEXT_CONF_CAP = 0.5

DEFAULT_MIN_CONFIDENCE = 0.5


@dataclass
class LangIdModel:
    """Per-language character n-gram counts, orders 1..order, add-k smoothed."""

    order: int
    smoothing: float
    languages: List[str]
    vocab: set
    # counts[lang][context] = (total, {char: count}); context length = order-1 or less
    counts: Dict[str, Dict[str, Tuple[int, Dict[str, int]]]] = field(default_factory=dict)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab) + 1  # +1 for the unseen-character bucket

    def _char_logprob(self, lang: str, context: str, char: str) -> float:
        total, per_char = self.counts[lang].get(context, (0, {}))
        count = per_char.get(char, 0)
        k = self.smoothing
        return math.log((count + k) / (total + k * self.vocab_size))

    def mean_loglik(self, lang: str, text: str) -> float:
        """Mean per-character log-likelihood under the order-n model, backing
        down to lower orders near the start of the text."""
        score = 0.0
        for i, c in enumerate(text):
            if c not in self.vocab:
                c = UNK_CHAR
            ctx_len = min(self.order - 1, i)
            ctx = text[i - ctx_len:i]
            score += self._char_logprob(lang, ctx, c)
        return score / len(text)

    def save(self, path) -> None:
        payload = {
            "order": self.order,
            "smoothing": self.smoothing,
            "languages": self.languages,
            "vocab": sorted(self.vocab),
            "counts": {
                lang: {ctx: [total, per_char] for ctx, (total, per_char) in table.items()}
                for lang, table in self.counts.items()
            },
        }
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(gzip.compress(json.dumps(payload, ensure_ascii=False).encode("utf-8")))

    @staticmethod
    def load(path) -> "LangIdModel":
        raw = Path(path).read_bytes()
        if not raw.startswith(MAGIC):
            raise ValueError(f"{path}: not a langid model file (bad magic)")
        payload = json.loads(gzip.decompress(raw[len(MAGIC):]))
        counts = {
            lang: {ctx: (total, per_char) for ctx, (total, per_char) in table.items()}
            for lang, table in payload["counts"].items()
        }
        return LangIdModel(
            order=payload["order"],
            smoothing=payload["smoothing"],
            languages=payload["languages"],
            vocab=set(payload["vocab"]),
            counts=counts,
        )


def train_langid(
    labeled_corpora: Dict[str, Iterable[str]],
    order: int = 3,
    smoothing: float = 0.1,
) -> LangIdModel:
    """Train per-language character n-gram tables (orders 1..order)."""
    if len(labeled_corpora) < 2:
        raise ValueError("need at least 2 languages to train language identification")
    if order < 1:
        raise ValueError("order must be >= 1")

    vocab: set = set()
    counts: Dict[str, Dict[str, Tuple[int, Dict[str, int]]]] = {}
    for lang in sorted(labeled_corpora):
        table: Dict[str, list] = {}
        n_chars = 0
        for text in labeled_corpora[lang]:
            vocab.update(text)
            n_chars += len(text)
            for i, c in enumerate(text):
                ctx_len = min(order - 1, i)
                ctx = text[i - ctx_len:i]
                # count the char under every context length it can back down to
                for width in range(ctx_len + 1):
                    key = ctx[len(ctx) - width:]
                    entry = table.get(key)
                    if entry is None:
                        entry = [0, {}]
                        table[key] = entry
                    entry[0] += 1
                    entry[1][c] = entry[1].get(c, 0) + 1
        if n_chars == 0:
            raise ValueError(f"empty corpus for language {lang!r}")
        counts[lang] = {ctx: (total, per_char) for ctx, (total, per_char) in table.items()}

    return LangIdModel(
        order=order,
        smoothing=smoothing,
        languages=sorted(labeled_corpora),
        vocab=vocab,
        counts=counts,
    )


@dataclass(frozen=True)
class IdResult:
    lang: str
    confidence: float


def identify(model: LangIdModel, text: str) -> IdResult:
    """Identify the language of `text`.

    Confidence is the softmax posterior of the winning language over the
    per-language mean log-likelihoods; ties break to the lexicographically
    smaller code. Texts shorter than SHORT_TEXT_CHARS get their confidence
    capped at 0.5.
    """
    if not text.strip():
        raise ValueError("cannot identify empty or whitespace-only text")

    scores = {lang: model.mean_loglik(lang, text) for lang in model.languages}
    best = max(scores.values())
    denom = sum(math.exp(s - best) for s in scores.values())
    # max() over sorted language codes keeps the first (smallest) on ties
    winner = min(lang for lang, s in scores.items() if s == best)
    confidence = math.exp(scores[winner] - best) / denom
    if len(text) < SHORT_TEXT_CHARS:
        confidence = min(confidence, SHORT_TEXT_CONF_CAP)
    return IdResult(lang=winner, confidence=confidence)


def tag_and_filter(
    docs: Iterable[Document],
    model: LangIdModel,
    min_confidence: float = DEFAULT_MIN_CONFIDENCE,
) -> Tuple[List[Document], List[Document]]:
    """Partition docs into (kept with lang set, dropped with a drop reason)."""
    kept: List[Document] = []
    dropped: List[Document] = []
    for doc in docs:
        try:
            result = identify(model, doc.text)
        except ValueError:
            dropped.append(doc.with_meta(drop_reason="langid_error"))
            continue
        if result.confidence >= min_confidence:
            kept.append(
                doc.with_lang(result.lang).with_meta(
                    langid_confidence=f"{result.confidence:.6f}"
                )
            )
        else:
            dropped.append(doc.with_meta(drop_reason="langid_low_confidence"))
    return kept, dropped
