"""Canonical document model, streaming JSONL I/O, manifests, and corpus stats."""

from __future__ import annotations

import gzip
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional

logger = logging.getLogger(__name__)

# The 18 covered languages (ISO-639-1).
KNOWN_LANGUAGES = frozenset(
    ["en", "zh", "ar", "es", "fr", "de", "it", "nl", "ru",
     "id", "pl", "pt", "ja", "th", "tr", "he", "ko", "vi"]
)

# Scripts without whitespace word boundaries: token proxy counts characters.
CHAR_COUNT_LANGS = frozenset(["zh", "ja", "th", "ko"])

UNK_LANG = "unk"

# Display names for prompt templates; covers the 18 training languages plus
# codes appearing in the evaluation benchmarks.
LANGUAGE_NAMES = {
    "en": "English", "zh": "Chinese", "ar": "Arabic", "es": "Spanish",
    "fr": "French", "de": "German", "it": "Italian", "nl": "Dutch",
    "ru": "Russian", "id": "Indonesian", "pl": "Polish", "pt": "Portuguese",
    "ja": "Japanese", "th": "Thai", "tr": "Turkish", "he": "Hebrew",
    "ko": "Korean", "vi": "Vietnamese",
    "bg": "Bulgarian", "el": "Greek", "hi": "Hindi", "sw": "Swahili",
    "ur": "Urdu", "bn": "Bengali", "fi": "Finnish", "te": "Telugu",
    "et": "Estonian", "ta": "Tamil", "my": "Burmese", "km": "Khmer",
    "ps": "Pashto",
}


def language_display(code: str) -> str:
    """Human-readable language name, falling back to the code itself."""
    return LANGUAGE_NAMES.get(code, code)


@dataclass(frozen=True)
class Document:
    """One corpus record. Immutable; derive modified copies via `with_*` helpers."""

    id: str
    text: str
    source: str = ""
    lang: Optional[str] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise ValueError("document id must be nonempty")

    def with_text(self, text: str) -> "Document":
        return replace(self, text=text)

    def with_lang(self, lang: str) -> "Document":
        return replace(self, lang=lang)

    def with_meta(self, **extra: str) -> "Document":
        merged = dict(self.meta)
        merged.update(extra)
        return replace(self, meta=merged)

    def to_json(self) -> dict:
        obj = {"id": self.id, "text": self.text, "source": self.source}
        if self.lang is not None:
            obj["lang"] = self.lang
        if self.meta:
            obj["meta"] = self.meta
        return obj

    @staticmethod
    def from_json(obj: dict) -> "Document":
        return Document(
            id=str(obj["id"]),
            text=obj["text"],
            source=obj.get("source", ""),
            lang=obj.get("lang"),
            meta=dict(obj.get("meta", {})),
        )


@dataclass(frozen=True)
class ParseError:
    """A malformed JSONL line, reported instead of silently dropped."""

    line: int
    message: str


def _open_text(path, mode: str):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def read_documents(
    path,
    on_error: Optional[Callable[[ParseError], None]] = None,
) -> Iterator[Document]:
    """Stream Documents from a JSONL file (optionally gzipped), one record per line.

    Malformed lines are routed to `on_error` (default: logged) with their
    1-based line number; well-formed lines before and after are still yielded.
    Memory use is bounded by one record, not file size.
    """
    report = on_error if on_error is not None else (
        lambda e: logger.warning("parse error at line %d: %s", e.line, e.message)
    )
    with _open_text(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                doc = Document.from_json(obj)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                report(ParseError(line=lineno, message=str(exc)))
                continue
            yield doc


def write_documents(docs: Iterable[Document], path) -> int:
    """Write Documents as UTF-8 JSONL, newline terminated. Returns count written."""
    count = 0
    with _open_text(path, "w") as fh:
        for doc in docs:
            fh.write(json.dumps(doc.to_json(), ensure_ascii=False))
            fh.write("\n")
            count += 1
    return count


def count_tokens(text: str, lang: Optional[str]) -> int:
    """Proxy token count: whitespace words, or non-whitespace characters for
    scripts without space-delimited words (zh/ja/th/ko)."""
    if lang in CHAR_COUNT_LANGS:
        return sum(1 for c in text if not c.isspace())
    return len(text.split())


@dataclass
class SourceEntry:
    source: str
    fraction: float
    token_count: int
    type: str = ""


@dataclass
class LanguageEntry:
    lang: str
    token_count: int
    percentage: float


@dataclass
class CellEntry:
    source: str
    lang: str
    token_count: int


@dataclass
class DatasetManifest:
    """Per-source and per-language composition of a corpus, plus the joint
    (source, lang) cells used by mixture planning."""

    sources: list = field(default_factory=list)
    languages: list = field(default_factory=list)
    cells: list = field(default_factory=list)

    def total_tokens(self) -> int:
        return sum(e.token_count for e in self.languages)

    def language_share(self, lang: str) -> float:
        total = self.total_tokens()
        if total == 0:
            return 0.0
        return sum(e.token_count for e in self.languages if e.lang == lang) / total

    def validate(self) -> None:
        if self.languages:
            pct = sum(e.percentage for e in self.languages)
            if abs(pct - 100.0) > 0.1:
                raise ValueError(f"language percentages sum to {pct}, expected 100 +- 0.1")
        if self.sources:
            frac = sum(e.fraction for e in self.sources)
            if abs(frac - 1.0) > 0.001:
                raise ValueError(f"source fractions sum to {frac}, expected 1 +- 0.001")

    def to_json(self) -> dict:
        return {
            "version": 1,
            "sources": [vars(e).copy() for e in self.sources],
            "languages": [vars(e).copy() for e in self.languages],
            "cells": [vars(e).copy() for e in self.cells],
        }

    @staticmethod
    def from_json(obj: dict) -> "DatasetManifest":
        return DatasetManifest(
            sources=[SourceEntry(**e) for e in obj.get("sources", [])],
            languages=[LanguageEntry(**e) for e in obj.get("languages", [])],
            cells=[CellEntry(**e) for e in obj.get("cells", [])],
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, ensure_ascii=False, indent=2)
            fh.write("\n")

    @staticmethod
    def load(path) -> "DatasetManifest":
        with open(path, encoding="utf-8") as fh:
            return DatasetManifest.from_json(json.load(fh))


def corpus_stats(docs: Iterable[Document]) -> DatasetManifest:
    """Compute the per-language / per-source token distribution of a corpus.

    Token counts use the whitespace/character proxy of `count_tokens`. Untagged
    documents land in the reserved "unk" bucket so stats can run before langid.
    """
    lang_tokens: dict = {}
    source_tokens: dict = {}
    cell_tokens: dict = {}
    for doc in docs:
        lang = doc.lang if doc.lang else UNK_LANG
        n = count_tokens(doc.text, lang)
        lang_tokens[lang] = lang_tokens.get(lang, 0) + n
        source_tokens[doc.source] = source_tokens.get(doc.source, 0) + n
        cell_tokens[(doc.source, lang)] = cell_tokens.get((doc.source, lang), 0) + n

    total = sum(lang_tokens.values())
    if total == 0:
        return DatasetManifest()

    languages = [
        LanguageEntry(lang=lang, token_count=n, percentage=100.0 * n / total)
        for lang, n in sorted(lang_tokens.items(), key=lambda kv: (-kv[1], kv[0]))
    ]
    sources = [
        SourceEntry(source=src, fraction=n / total, token_count=n)
        for src, n in sorted(source_tokens.items(), key=lambda kv: (-kv[1], kv[0]))
    ]
    cells = [
        CellEntry(source=src, lang=lang, token_count=n)
        for (src, lang), n in sorted(cell_tokens.items())
    ]
    return DatasetManifest(sources=sources, languages=languages, cells=cells)
