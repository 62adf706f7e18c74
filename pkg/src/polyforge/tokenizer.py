"""Byte-level BPE tokenizer: training, inference, and compression reporting.

Tokens are byte strings; the 256 single-byte tokens guarantee that any UTF-8
input round-trips exactly (byte fallback). Pre-tokenization attaches leading
whitespace to the following word (the word-boundary convention) and splits
digit runs into single-digit pieces.
"""

from __future__ import annotations

import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from random import Random
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

_PIECE_RE = re.compile(r"\s*\S+|\s+")

FILE_MAGIC = "PFBPE1"


def _is_digit(c: str) -> bool:
    return unicodedata.category(c) == "Nd"


@dataclass(frozen=True)
class PretokenizerFlags:
    split_digits: bool = True
    byte_fallback: bool = True


def pretokenize(text: str, flags: PretokenizerFlags = PretokenizerFlags()) -> List[str]:
    """Split text into pieces whose concatenation reproduces it exactly.

    Pieces are whitespace-prefixed words; with split_digits every decimal
    digit becomes its own piece, so no piece ever holds two digits.
    """
    words = _PIECE_RE.findall(text)
    if not flags.split_digits:
        return words
    pieces: List[str] = []
    for word in words:
        start = 0
        for i, c in enumerate(word):
            if _is_digit(c):
                if i > start:
                    pieces.append(word[start:i])
                pieces.append(c)
                start = i + 1
        if start < len(word):
            pieces.append(word[start:])
    return pieces


@dataclass
class SamplingWeights:
    """Per-language multinomial weights, temperature-scaled from corpus sizes."""

    weights: Dict[str, float]
    alpha: float = 0.3

    def __post_init__(self):
        total = sum(self.weights.values())
        if total <= 0:
            raise ValueError("sampling weights must have positive total")
        if any(w <= 0 for w in self.weights.values()):
            raise ValueError("all sampling weights must be positive")
        self.weights = {lang: w / total for lang, w in self.weights.items()}


def sampling_weights(corpus_sizes: Mapping[str, float], alpha: float = 0.3) -> SamplingWeights:
    """w_lang proportional to size^alpha; alpha=1 keeps raw proportions,
    alpha near 0 approaches uniform."""
    if not corpus_sizes:
        raise ValueError("corpus_sizes is empty")
    scaled = {lang: float(size) ** alpha for lang, size in corpus_sizes.items()}
    return SamplingWeights(weights=scaled, alpha=alpha)


@dataclass
class BpeModel:
    vocab: Dict[bytes, int]
    merges: List[Tuple[bytes, bytes]]
    flags: PretokenizerFlags = field(default_factory=PretokenizerFlags)

    def __post_init__(self):
        self._ranks = {pair: i for i, pair in enumerate(self.merges)}
        self._id_to_token = {i: t for t, i in self.vocab.items()}
        self._piece_cache: Dict[str, List[int]] = {}

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def _encode_piece(self, piece: str) -> List[int]:
        cached = self._piece_cache.get(piece)
        if cached is not None:
            return cached
        data = piece.encode("utf-8")
        symbols = [data[i:i + 1] for i in range(len(data))]
        while len(symbols) > 1:
            best_rank = None
            best_idx = -1
            for i in range(len(symbols) - 1):
                rank = self._ranks.get((symbols[i], symbols[i + 1]))
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank = rank
                    best_idx = i
            if best_rank is None:
                break
            symbols[best_idx:best_idx + 2] = [symbols[best_idx] + symbols[best_idx + 1]]
        try:
            ids = [self.vocab[s] for s in symbols]
        except KeyError as exc:
            raise ValueError(f"symbol {exc.args[0]!r} not in vocabulary (byte fallback off?)")
        if len(self._piece_cache) < 1 << 16:
            self._piece_cache[piece] = ids
        return ids

    def encode(self, text: str) -> List[int]:
        ids: List[int] = []
        for piece in pretokenize(text, self.flags):
            ids.extend(self._encode_piece(piece))
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        try:
            data = b"".join(self._id_to_token[i] for i in ids)
        except KeyError as exc:
            raise ValueError(f"unknown token id {exc.args[0]}")
        return data.decode("utf-8")

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(
                f"{FILE_MAGIC} vocab={len(self.vocab)} merges={len(self.merges)} "
                f"split_digits={int(self.flags.split_digits)} "
                f"byte_fallback={int(self.flags.byte_fallback)}\n"
            )
            fh.write("[vocab]\n")
            for token, idx in sorted(self.vocab.items(), key=lambda kv: kv[1]):
                fh.write(f"{_escape(token)}\t{idx}\n")
            fh.write("[merges]\n")
            for left, right in self.merges:
                fh.write(f"{_escape(left)} {_escape(right)}\n")

    @staticmethod
    def load(path) -> "BpeModel":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().split()
            if not header or header[0] != FILE_MAGIC:
                raise ValueError(f"{path}: not a BPE model file (bad magic)")
            opts = dict(kv.split("=") for kv in header[1:])
            section = None
            vocab: Dict[bytes, int] = {}
            merges: List[Tuple[bytes, bytes]] = []
            for line in fh:
                line = line.rstrip("\n")
                if line in ("[vocab]", "[merges]"):
                    section = line
                    continue
                if not line:
                    continue
                if section == "[vocab]":
                    token, idx = line.split("\t")
                    vocab[_unescape(token)] = int(idx)
                elif section == "[merges]":
                    left, right = line.split(" ")
                    merges.append((_unescape(left), _unescape(right)))
        return BpeModel(
            vocab=vocab,
            merges=merges,
            flags=PretokenizerFlags(
                split_digits=bool(int(opts.get("split_digits", 1))),
                byte_fallback=bool(int(opts.get("byte_fallback", 1))),
            ),
        )


def _escape(token: bytes) -> str:
    out = []
    for b in token:
        if 0x21 <= b <= 0x7E and b != 0x5C:
            out.append(chr(b))
        else:
            out.append(f"\\x{b:02x}")
    return "".join(out)


_ESCAPE_RE = re.compile(r"\\x([0-9a-f]{2})|(.)", re.DOTALL)


def _unescape(text: str) -> bytes:
    out = bytearray()
    for hex_part, raw in _ESCAPE_RE.findall(text):
        if hex_part:
            out.append(int(hex_part, 16))
        else:
            out.extend(raw.encode("utf-8"))
    return bytes(out)


def _sample_texts(
    corpus,
    sampling: Optional[SamplingWeights],
    seed: int,
    num_samples: Optional[int],
) -> List[str]:
    if isinstance(corpus, Mapping):
        by_lang = {lang: list(texts) for lang, texts in corpus.items()}
        if sampling is None:
            return [t for lang in sorted(by_lang) for t in by_lang[lang]]
        langs = sorted(sampling.weights)
        missing = [l for l in langs if not by_lang.get(l)]
        if missing:
            raise ValueError(f"sampling weights name languages with no texts: {missing}")
        total = sum(len(by_lang[l]) for l in langs)
        n = num_samples if num_samples is not None else total
        rng = Random(seed)
        probs = [sampling.weights[l] for l in langs]
        sampled = []
        for _ in range(n):
            lang = rng.choices(langs, weights=probs)[0]
            sampled.append(rng.choice(by_lang[lang]))
        return sampled
    return list(corpus)


def train_bpe(
    corpus,
    vocab_size: int,
    sampling: Optional[SamplingWeights] = None,
    seed: int = 0,
    flags: PretokenizerFlags = PretokenizerFlags(),
    num_samples: Optional[int] = None,
) -> BpeModel:
    """Learn merges greedily by pair frequency on the (optionally sampled)
    corpus; ties break to the lexicographically smaller pair.

    `corpus` is either a sequence of texts or a mapping lang -> texts, in
    which case `sampling` draws the training sample.
    """
    texts = _sample_texts(corpus, sampling, seed, num_samples)

    piece_counts: Counter = Counter()
    for text in texts:
        piece_counts.update(pretokenize(text, flags))

    if flags.byte_fallback:
        alphabet = [bytes([b]) for b in range(256)]
    else:
        seen = sorted({bytes([b]) for piece in piece_counts for b in piece.encode("utf-8")})
        alphabet = seen
    if vocab_size <= len(alphabet):
        raise ValueError(
            f"vocab_size {vocab_size} too small: need more than the "
            f"{len(alphabet)}-symbol base alphabet"
        )

    vocab: Dict[bytes, int] = {tok: i for i, tok in enumerate(alphabet)}
    merges: List[Tuple[bytes, bytes]] = []

    # word list as (symbols, frequency); pair index tracks affected words
    words: List[Tuple[List[bytes], int]] = [
        ([piece.encode("utf-8")[i:i + 1] for i in range(len(piece.encode("utf-8")))], freq)
        for piece, freq in sorted(piece_counts.items())
    ]
    pair_counts: Counter = Counter()
    pair_words: Dict[Tuple[bytes, bytes], set] = {}
    for w_idx, (symbols, freq) in enumerate(words):
        for i in range(len(symbols) - 1):
            pair = (symbols[i], symbols[i + 1])
            pair_counts[pair] += freq
            pair_words.setdefault(pair, set()).add(w_idx)

    while len(vocab) < vocab_size and pair_counts:
        best_pair = min(pair_counts, key=lambda p: (-pair_counts[p], p))
        if pair_counts[best_pair] < 2:
            break
        new_token = best_pair[0] + best_pair[1]
        merges.append(best_pair)
        vocab[new_token] = len(vocab)

        affected = sorted(pair_words.get(best_pair, ()))
        for w_idx in affected:
            symbols, freq = words[w_idx]
            i = 0
            while i < len(symbols) - 1:
                if symbols[i] == best_pair[0] and symbols[i + 1] == best_pair[1]:
                    if i > 0:
                        left = (symbols[i - 1], symbols[i])
                        pair_counts[left] -= freq
                        if pair_counts[left] <= 0:
                            del pair_counts[left]
                    if i + 2 < len(symbols):
                        right = (symbols[i + 1], symbols[i + 2])
                        pair_counts[right] -= freq
                        if pair_counts[right] <= 0:
                            del pair_counts[right]
                    symbols[i:i + 2] = [new_token]
                    if i > 0:
                        left = (symbols[i - 1], new_token)
                        pair_counts[left] += freq
                        pair_words.setdefault(left, set()).add(w_idx)
                    if i + 1 < len(symbols):
                        right = (new_token, symbols[i + 1])
                        pair_counts[right] += freq
                        pair_words.setdefault(right, set()).add(w_idx)
                else:
                    i += 1
        pair_counts.pop(best_pair, None)
        pair_words.pop(best_pair, None)

    return BpeModel(vocab=vocab, merges=merges, flags=flags)


def compression_rate(
    model: BpeModel,
    per_language_corpora: Mapping[str, Sequence[str]],
    baseline_tokens_per_char: Mapping[str, float],
) -> Dict[str, float]:
    """Tokens-per-character of `model` relative to a baseline tokenizer's
    tokens-per-character; the baseline itself is 1.0 by construction."""
    ratios: Dict[str, float] = {}
    for lang in sorted(per_language_corpora):
        texts = per_language_corpora[lang]
        chars = sum(len(t) for t in texts)
        if chars == 0:
            raise ValueError(f"empty corpus for language {lang!r}")
        if lang not in baseline_tokens_per_char:
            raise ValueError(f"no baseline tokens-per-char for language {lang!r}")
        tokens = sum(len(model.encode(t)) for t in texts)
        ratios[lang] = (tokens / chars) / baseline_tokens_per_char[lang]
    return ratios


def tokens_per_char(model: BpeModel, texts: Iterable[str]) -> float:
    """Helper for building baseline maps from another model."""
    total_tokens = 0
    total_chars = 0
    for t in texts:
        total_tokens += len(model.encode(t))
        total_chars += len(t)
    if total_chars == 0:
        raise ValueError("empty corpus")
    return total_tokens / total_chars
