"""Text-overlap metrics: Rouge-L/Rouge-N, corpus BLEU, token F1, accuracy.

All functions here operate on token lists; `simple_tokenize` provides the
language-aware segmentation (word+punct runs for space-delimited scripts,
per-character tokens for ja/th/zh).
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import List, Optional, Sequence

# Scripts tokenized per character for overlap metrics.
CHAR_TOKEN_LANGS = frozenset(["ja", "th", "zh"])

_WORDPUNCT = re.compile(r"\w+|[^\w\s]+", re.UNICODE)


def simple_tokenize(text: str, lang: Optional[str] = None, lowercase: bool = False) -> List[str]:
    """Split text into tokens: wordpunct runs, or single characters for
    languages without whitespace word boundaries."""
    if lowercase:
        text = text.lower()
    if lang in CHAR_TOKEN_LANGS:
        return [c for c in text if not c.isspace()]
    return _WORDPUNCT.findall(text)


def lcs_length(a: Sequence, b: Sequence) -> int:
    """Longest common subsequence length, O(len(a)*len(b)) with two rows."""
    if not a or not b:
        return 0
    if len(b) > len(a):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        curr = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                curr.append(prev[j - 1] + 1)
            else:
                curr.append(max(prev[j], curr[j - 1]))
        prev = curr
    return prev[-1]


@dataclass(frozen=True)
class OverlapScore:
    precision: float
    recall: float
    f1: float


def _prf(match: float, pred_total: float, ref_total: float) -> OverlapScore:
    p = match / pred_total if pred_total else 0.0
    r = match / ref_total if ref_total else 0.0
    f1 = 2 * p * r / (p + r) if (p + r) else 0.0
    return OverlapScore(precision=p, recall=r, f1=f1)


def rouge_l(reference: Sequence[str], candidate: Sequence[str]) -> OverlapScore:
    """LCS-based Rouge-L: precision over the candidate, recall over the
    reference. Both empty scores 0."""
    m = lcs_length(reference, candidate)
    return _prf(m, len(candidate), len(reference))


def ngrams(tokens: Sequence[str], n: int) -> List[tuple]:
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def rouge_n(reference: Sequence[str], candidate: Sequence[str], n: int) -> OverlapScore:
    """Count-clipped n-gram overlap (Rouge-N)."""
    ref_counts = Counter(ngrams(reference, n))
    cand_counts = Counter(ngrams(candidate, n))
    match = sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
    return _prf(match, sum(cand_counts.values()), sum(ref_counts.values()))


def token_f1(prediction: Sequence[str], gold: Sequence[str]) -> float:
    """SQuAD-style token overlap F1 (multiset intersection)."""
    if not prediction and not gold:
        return 1.0
    overlap = sum((Counter(prediction) & Counter(gold)).values())
    return _prf(overlap, len(prediction), len(gold)).f1


def accuracy(predictions: Sequence, golds: Sequence) -> float:
    """Exact-match fraction."""
    if len(predictions) != len(golds):
        raise ValueError(f"length mismatch: {len(predictions)} predictions vs {len(golds)} golds")
    if not golds:
        return 0.0
    return sum(1 for p, g in zip(predictions, golds) if p == g) / len(golds)


def bleu_corpus(
    candidates: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    max_n: int = 4,
) -> float:
    """Corpus-level BLEU on a 0..100 scale: 4-gram modified precision with
    brevity penalty; add-one smoothing on the n >= 2 precisions.
    """
    if len(candidates) != len(references):
        raise ValueError(f"length mismatch: {len(candidates)} candidates vs {len(references)} references")
    if not candidates:
        return 0.0

    cand_len = sum(len(c) for c in candidates)
    ref_len = sum(len(r) for r in references)
    if cand_len == 0:
        return 0.0

    log_sum = 0.0
    for n in range(1, max_n + 1):
        matched = 0
        total = 0
        for cand, ref in zip(candidates, references):
            cand_counts = Counter(ngrams(cand, n))
            ref_counts = Counter(ngrams(ref, n))
            matched += sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
            total += sum(cand_counts.values())
        if n >= 2:
            matched += 1
            total += 1
        if matched == 0 or total == 0:
            return 0.0
        log_sum += math.log(matched / total)

    bp = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
    return 100.0 * bp * math.exp(log_sum / max_n)
