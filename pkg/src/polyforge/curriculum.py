"""Two-stage curriculum data planning and sampling, plus the LR schedule."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from random import Random
from typing import Dict, List, Sequence, Set, Tuple

from .corpus import DatasetManifest, Document, UNK_LANG, count_tokens


@dataclass
class ScheduleConfig:
    """Linear warmup followed by cosine decay to a fraction of the peak."""

    total_steps: int
    warmup_steps: int = 2000
    lr_start: float = 1e-7
    lr_peak: float = 6e-5
    final_fraction: float = 0.1

    def __post_init__(self):
        if not 0 < self.lr_start < self.lr_peak:
            raise ValueError("require 0 < lr_start < lr_peak")
        if not 0 < self.final_fraction < 1:
            raise ValueError("require 0 < final_fraction < 1")
        if not 0 < self.warmup_steps < self.total_steps:
            raise ValueError("require 0 < warmup_steps < total_steps")

    def to_json(self) -> dict:
        return vars(self).copy()

    @staticmethod
    def from_json(obj: dict) -> "ScheduleConfig":
        return ScheduleConfig(**obj)


def learning_rate(step: int, cfg: ScheduleConfig) -> float:
    """LR at `step`: linear lr_start -> lr_peak over the warmup, then cosine
    decay from lr_peak to final_fraction * lr_peak at total_steps."""
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    if step < cfg.warmup_steps:
        return cfg.lr_start + (cfg.lr_peak - cfg.lr_start) * (step / cfg.warmup_steps)
    if step == cfg.warmup_steps:
        return cfg.lr_peak
    final = cfg.final_fraction * cfg.lr_peak
    progress = (step - cfg.warmup_steps) / (cfg.total_steps - cfg.warmup_steps)
    return final + (cfg.lr_peak - final) * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class MixtureTarget:
    """Desired per-language token proportions with per-source quality priors."""

    lang_proportions: Dict[str, float]
    source_quality: Dict[str, float] = field(default_factory=dict)
    parallel_boost: float = 1.0
    parallel_sources: Set[str] = field(default_factory=set)

    def __post_init__(self):
        total = sum(self.lang_proportions.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"target proportions sum to {total}, expected 1")
        if any(not 0.0 <= p <= 1.0 for p in self.lang_proportions.values()):
            raise ValueError("target proportions must lie in [0, 1]")

    def cell_prior(self, source: str, lang: str) -> float:
        prior = self.source_quality.get(source, 1.0)
        if source in self.parallel_sources:
            prior *= self.parallel_boost
        return prior

    def to_json(self) -> dict:
        return {
            "lang_proportions": self.lang_proportions,
            "source_quality": self.source_quality,
            "parallel_boost": self.parallel_boost,
            "parallel_sources": sorted(self.parallel_sources),
        }

    @staticmethod
    def from_json(obj: dict) -> "MixtureTarget":
        return MixtureTarget(
            lang_proportions=dict(obj["lang_proportions"]),
            source_quality=dict(obj.get("source_quality", {})),
            parallel_boost=obj.get("parallel_boost", 1.0),
            parallel_sources=set(obj.get("parallel_sources", [])),
        )


@dataclass
class PlanCell:
    source: str
    lang: str
    weight: float
    expected_tokens: float
    available_tokens: int


@dataclass
class MixturePlan:
    cells: List[PlanCell]
    token_budget: float
    stage: str = "stage2"
    max_repeat: float = 4.0

    def lang_expected(self) -> Dict[str, float]:
        out: Dict[str, float] = {}
        for cell in self.cells:
            out[cell.lang] = out.get(cell.lang, 0.0) + cell.expected_tokens
        return out

    def to_json(self) -> dict:
        return {
            "version": 1,
            "stage": self.stage,
            "token_budget": self.token_budget,
            "max_repeat": self.max_repeat,
            "cells": [vars(c).copy() for c in self.cells],
        }

    @staticmethod
    def from_json(obj: dict) -> "MixturePlan":
        return MixturePlan(
            cells=[PlanCell(**c) for c in obj["cells"]],
            token_budget=obj["token_budget"],
            stage=obj.get("stage", "stage2"),
            max_repeat=obj.get("max_repeat", 4.0),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")

    @staticmethod
    def load(path) -> "MixturePlan":
        with open(path, encoding="utf-8") as fh:
            return MixturePlan.from_json(json.load(fh))


def plan_mixture(
    manifest: DatasetManifest,
    target: MixtureTarget,
    token_budget: float,
    stage: str = "stage2",
    max_repeat: float = 4.0,
) -> MixturePlan:
    """Allocate the token budget across (source, lang) cells so the expected
    per-language proportions match the target.

    Within a language the budget spreads proportionally to available tokens
    times the source prior, capped at available * max_repeat per cell
    (water-filling); a language whose capacity cannot absorb its share is an
    error.
    """
    if token_budget <= 0:
        raise ValueError("token_budget must be positive")
    if not manifest.cells:
        raise ValueError("manifest has no (source, lang) cells; recompute stats with sources")

    by_lang: Dict[str, List] = {}
    for cell in manifest.cells:
        if cell.token_count > 0:
            by_lang.setdefault(cell.lang, []).append(cell)

    plan_cells: List[PlanCell] = []
    for lang in sorted(target.lang_proportions):
        share = target.lang_proportions[lang]
        cells = by_lang.get(lang)
        if not cells:
            raise ValueError(f"target language {lang!r} absent from manifest")
        lang_budget = share * token_budget
        capacity = {id(c): c.token_count * max_repeat for c in cells}
        if sum(capacity.values()) + 1e-9 < lang_budget:
            raise ValueError(
                f"budget for language {lang!r} ({lang_budget:.0f} tokens) exceeds "
                f"capacity {sum(capacity.values()):.0f} at max_repeat={max_repeat}"
            )
        allocation = {id(c): 0.0 for c in cells}
        active = list(cells)
        remaining = lang_budget
        while remaining > 1e-9 and active:
            weight_sum = sum(c.token_count * target.cell_prior(c.source, c.lang) for c in active)
            overflow: Set[int] = set()
            allocated_this_round = 0.0
            for c in active:
                w = c.token_count * target.cell_prior(c.source, c.lang)
                want = remaining * w / weight_sum
                room = capacity[id(c)] - allocation[id(c)]
                if want >= room - 1e-12:
                    allocation[id(c)] += room
                    allocated_this_round += room
                    overflow.add(id(c))
                else:
                    allocation[id(c)] += want
                    allocated_this_round += want
            remaining -= allocated_this_round
            if overflow:
                active = [c for c in active if id(c) not in overflow]
            else:
                break
        for c in sorted(cells, key=lambda c: (c.source, c.lang)):
            expected = allocation[id(c)]
            plan_cells.append(
                PlanCell(
                    source=c.source,
                    lang=c.lang,
                    weight=expected / token_budget,
                    expected_tokens=expected,
                    available_tokens=c.token_count,
                )
            )
    return MixturePlan(cells=plan_cells, token_budget=token_budget, stage=stage, max_repeat=max_repeat)


@dataclass
class RealizedStats:
    tokens_per_lang: Dict[str, int]
    total_tokens: int
    documents: int

    def lang_share(self, lang: str) -> float:
        if self.total_tokens == 0:
            return 0.0
        return self.tokens_per_lang.get(lang, 0) / self.total_tokens


def sample_stage(
    docs: Sequence[Document],
    plan: MixturePlan,
    seed: int = 0,
) -> Tuple[List[Document], RealizedStats]:
    """Draw documents (with replacement) cell by cell until each cell's
    expected token count is reached. Deterministic: every cell uses a seed
    derived from (seed, source, lang)."""
    population: Dict[Tuple[str, str], List[Document]] = {}
    for doc in docs:
        lang = doc.lang if doc.lang else UNK_LANG
        population.setdefault((doc.source, lang), []).append(doc)

    sampled: List[Document] = []
    tokens_per_lang: Dict[str, int] = {}
    total = 0
    for cell in sorted(plan.cells, key=lambda c: (c.source, c.lang)):
        if cell.expected_tokens <= 0:
            continue
        pool = population.get((cell.source, cell.lang))
        if not pool:
            raise ValueError(
                f"plan cell ({cell.source!r}, {cell.lang!r}) has positive weight "
                "but no documents"
            )
        rng = Random(f"{seed}:{cell.source}:{cell.lang}")
        got = 0
        while got < cell.expected_tokens:
            doc = pool[rng.randrange(len(pool))]
            n = count_tokens(doc.text, cell.lang)
            if n == 0:
                n = 1  # avoid stalling on empty docs
            sampled.append(doc)
            got += n
        tokens_per_lang[cell.lang] = tokens_per_lang.get(cell.lang, 0) + got
        total += got
    return sampled, RealizedStats(
        tokens_per_lang=tokens_per_lang, total_tokens=total, documents=len(sampled)
    )
