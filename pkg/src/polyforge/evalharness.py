"""Multilingual benchmark runner: cloze log-likelihood option selection for
classification tasks, few-shot prompted generation for the rest, and the
accuracy / token-F1 / Rouge-average / BLEU metrics."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from random import Random
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .corpus import language_display
from .metrics import (
    accuracy as _accuracy,
    bleu_corpus,
    rouge_l,
    rouge_n,
    simple_tokenize,
    token_f1,
)


class EvalSchemaError(ValueError):
    """A dataset item is missing a field the task template requires."""


@dataclass(frozen=True)
class EvalTaskSpec:
    name: str
    kind: str    # classification | generation
    metric: str  # accuracy | f1 | rouge_avg | bleu
    languages: Tuple[str, ...] = ()

    def __post_init__(self):
        pairing = {"classification": ("accuracy",), "generation": ("f1", "rouge_avg", "bleu")}
        if self.metric not in pairing[self.kind]:
            raise ValueError(f"metric {self.metric!r} invalid for kind {self.kind!r}")


TASKS: Dict[str, EvalTaskSpec] = {
    spec.name: spec
    for spec in [
        EvalTaskSpec("xnli", "classification", "accuracy",
                     ("en", "fr", "es", "de", "el", "bg", "ru", "tr", "ar",
                      "vi", "th", "zh", "hi", "sw", "ur")),
        EvalTaskSpec("xcopa", "classification", "accuracy",
                     ("et", "id", "it", "sw", "ta", "th", "tr", "vi", "zh", "ht", "qu")),
        EvalTaskSpec("pawsx", "classification", "accuracy",
                     ("en", "de", "es", "fr", "ja", "ko", "zh")),
        EvalTaskSpec("xwinograd", "classification", "accuracy",
                     ("en", "fr", "ja", "pt", "ru", "zh")),
        EvalTaskSpec("tydiqa", "generation", "f1",
                     ("en", "ar", "id", "ko", "ru")),
        EvalTaskSpec("mtg_sg", "generation", "rouge_avg", ("en", "de", "es", "fr", "zh")),
        EvalTaskSpec("mtg_tg", "generation", "rouge_avg", ("en", "de", "es", "fr", "zh")),
        EvalTaskSpec("mtg_qg", "generation", "rouge_avg", ("en", "de", "es", "fr", "zh")),
        EvalTaskSpec("mtg_sum", "generation", "rouge_avg", ("en", "de", "es", "fr", "zh")),
        EvalTaskSpec("wmt20", "generation", "bleu", ("de", "ja", "ru", "zh")),
    ]
}


@dataclass
class ClozeInstance:
    context: str
    options: List[str]  # continuation strings completing the sentence
    gold_index: int
    lang: Optional[str] = None

    def __post_init__(self):
        if len(self.options) < 2:
            raise ValueError("cloze instance needs at least 2 options")
        if not 0 <= self.gold_index < len(self.options):
            raise ValueError("gold_index out of range")


@dataclass
class GenerationInstance:
    prompt: str
    targets: List[str]  # one or more acceptable references
    lang: Optional[str] = None


def _require(raw: dict, *fields: str) -> List:
    missing = [f for f in fields if f not in raw]
    if missing:
        raise EvalSchemaError(f"item missing field(s): {', '.join(missing)}")
    return [raw[f] for f in fields]


_XNLI_LABELS = {"entailment": 0, "neutral": 1, "contradiction": 2}


def _label_index(label, names: dict, n_options: int) -> int:
    if isinstance(label, str) and label in names:
        return names[label]
    idx = int(label)
    if not 0 <= idx < n_options:
        raise EvalSchemaError(f"label {label!r} out of range")
    return idx


def _strip_final_period(text: str) -> str:
    return text.rstrip().rstrip(".。")


def _lower_first(text: str) -> str:
    return text[:1].lower() + text[1:] if text else text


def _cloze_parts(spec: EvalTaskSpec, raw: dict) -> Tuple[str, List[str], int]:
    if spec.name == "xnli":
        premise, hypothesis, label = _require(raw, "premise", "hypothesis", "label")
        context = f"{_strip_final_period(premise)}., right? "
        options = [f"Yes, {hypothesis}", f"Also, {hypothesis}", f"No, {hypothesis}"]
        return context, options, _label_index(label, _XNLI_LABELS, 3)
    if spec.name == "pawsx":
        s1, s2, label = _require(raw, "sentence1", "sentence2", "label")
        context = f"{_strip_final_period(s1)}., right? "
        options = [f"Yes, {s2}", f"No, {s2}"]
        # label 1 means paraphrase -> "Yes"
        return context, options, 0 if int(label) == 1 else 1
    if spec.name == "xcopa":
        premise, c1, c2, question, label = _require(
            raw, "premise", "choice1", "choice2", "question", "label"
        )
        connective = {"cause": "because", "effect": "therefore"}.get(question)
        if connective is None:
            raise EvalSchemaError(f"xcopa question must be cause|effect, got {question!r}")
        context = f"{_strip_final_period(premise)} {connective} "
        options = [_lower_first(c1), _lower_first(c2)]
        return context, options, _label_index(label, {}, 2)
    if spec.name == "xwinograd":
        sentence, o1, o2, label = _require(raw, "sentence", "option1", "option2", "label")
        if "_" not in sentence:
            raise EvalSchemaError("xwinograd sentence must contain the '_' blank")
        blank = sentence.index("_")
        prefix = sentence[:blank].rstrip()
        suffix = sentence[blank + 1:]
        context = prefix + " " if prefix else ""
        options = [o1 + suffix, o2 + suffix]
        return context, options, _label_index(label, {}, 2)
    raise ValueError(f"{spec.name} is not a classification task")


def _generation_parts(spec: EvalTaskSpec, raw: dict) -> Tuple[str, List[str]]:
    lang = raw.get("lang", "en")
    name = language_display(lang)
    if spec.name == "tydiqa":
        context, question = _require(raw, "context", "question")
        answers = raw.get("answers") or ([raw["answer"]] if "answer" in raw else None)
        if not answers:
            raise EvalSchemaError("item missing field(s): answers")
        prompt = (
            f"Read the context and answer the question in one or a few words in {name}.\n\n"
            f"Context ({name}): {context}\n"
            f"Question: {question}\n"
            f"Answer:"
        )
        return prompt, [str(a) for a in answers]
    if spec.name == "mtg_tg":
        source, target = _require(raw, "input", "target")
        prompt = (f"Please generate a title for the following document in {name}\n"
                  f"document: {source}\ntitle:")
        return prompt, [target]
    if spec.name == "mtg_sg":
        source, target = _require(raw, "input", "target")
        prompt = (f"Write a story end of the following story in just a few sentences in {name}.\n"
                  f"story: {source}\nstory ending:")
        return prompt, [target]
    if spec.name == "mtg_qg":
        source, target = _require(raw, "input", "target")
        answer = raw.get("answer", "")
        prompt = (
            f"Given a passage and a concept that can be found in this passage, please "
            f"generate a question in {name}, the answer of which is this concept and is "
            f"answerable after reading this passage.\n"
            f"passage: {source}\nanswer: {answer}\nquestion:"
        )
        return prompt, [target]
    if spec.name == "mtg_sum":
        source, target = _require(raw, "input", "target")
        prompt = (f"Please generate a short summary of the given document in {name}\n"
                  f"document: {source}\nsummary:")
        return prompt, [target]
    if spec.name == "wmt20":
        source, target, src, tgt = _require(raw, "source", "target", "src_lang", "tgt_lang")
        prompt = (
            f"{source}\n"
            f"Translate this sentence from {language_display(src)} to {language_display(tgt)}.\n\n"
        )
        return prompt, [target]
    raise ValueError(f"{spec.name} is not a generation task")


def format_instance(
    spec: EvalTaskSpec,
    raw_example: dict,
    fewshot_examples: Sequence[dict] = (),
) -> Union[ClozeInstance, GenerationInstance]:
    """Render one dataset item into a scored instance, with solved few-shot
    demonstrations prepended when given."""
    lang = raw_example.get("lang")
    if spec.kind == "classification":
        prefix = ""
        for demo in fewshot_examples:
            ctx, options, gold = _cloze_parts(spec, demo)
            prefix += ctx + options[gold] + "\n\n"
        context, options, gold = _cloze_parts(spec, raw_example)
        return ClozeInstance(context=prefix + context, options=options,
                             gold_index=gold, lang=lang)
    prefix = ""
    for demo in fewshot_examples:
        prompt, targets = _generation_parts(spec, demo)
        prefix += prompt + " " + targets[0] + "\n\n"
    prompt, targets = _generation_parts(spec, raw_example)
    return GenerationInstance(prompt=prefix + prompt, targets=targets, lang=lang)


# ---------------------------------------------------------------------------
# Scorer backends
# ---------------------------------------------------------------------------


class ScorerBackend:
    """Model interface the harness drives: continuation log-likelihood,
    greedy generation, and token counting."""

    def loglik(self, context: str, continuation: str) -> float:
        raise NotImplementedError

    def generate(self, prompt: str, max_tokens: int) -> str:
        raise NotImplementedError

    def token_count(self, text: str) -> int:
        return max(1, len(text.split()))


class TableStubBackend(ScorerBackend):
    """Deterministic table-driven backend for tests: exact-match lookups with
    configurable defaults."""

    def __init__(
        self,
        logliks: Optional[Dict[Tuple[str, str], float]] = None,
        generations: Optional[Dict[str, str]] = None,
        default_loglik: float = -100.0,
        default_generation: str = "",
    ):
        self.logliks = logliks or {}
        self.generations = generations or {}
        self.default_loglik = default_loglik
        self.default_generation = default_generation

    def loglik(self, context: str, continuation: str) -> float:
        return self.logliks.get((context, continuation), self.default_loglik)

    def generate(self, prompt: str, max_tokens: int) -> str:
        return self.generations.get(prompt, self.default_generation)


class NGramScorerBackend(ScorerBackend):
    """Tiny character n-gram LM backend: a real (if weak) probabilistic
    scorer for harness plumbing tests and demos."""

    def __init__(self, training_texts: Sequence[str], order: int = 3, smoothing: float = 0.1):
        from .langid import train_langid

        # borrow the char-ngram machinery by training a one-vs-uniform pair
        self._model = train_langid(
            {"lm": list(training_texts), "uniform": [" "]}, order=order, smoothing=smoothing
        )

    def loglik(self, context: str, continuation: str) -> float:
        if not continuation:
            return 0.0
        full = context + continuation
        lead = self._model.mean_loglik("lm", context) * len(context) if context else 0.0
        return self._model.mean_loglik("lm", full) * len(full) - lead

    def generate(self, prompt: str, max_tokens: int) -> str:
        # greedy next-char continuation; stops at newline or the token budget
        out: List[str] = []
        text = prompt
        alphabet = sorted(self._model.vocab)
        for _ in range(max_tokens * 8):
            ctx = text[-(self._model.order - 1):] if self._model.order > 1 else ""
            best_c, best_lp = None, None
            for c in alphabet:
                lp = self._model._char_logprob("lm", ctx, c)
                if best_lp is None or lp > best_lp:
                    best_c, best_lp = c, lp
            if best_c is None or best_c == "\n":
                break
            out.append(best_c)
            text += best_c
            if len("".join(out).split()) >= max_tokens:
                break
        return "".join(out)


class HttpScorerBackend(ScorerBackend):
    """Remote scorer: POST {"mode": "loglik"|"generate", ...} JSON; expects
    {"loglik": float} or {"text": str} back."""

    def __init__(self, url: str, api_key: Optional[str] = None, timeout: float = 120.0):
        import os

        self.url = url
        self.api_key = api_key if api_key is not None else os.environ.get("POLYFORGE_API_KEY")
        self.timeout = timeout

    def _post(self, payload: dict) -> dict:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        resp = requests.post(self.url, json=payload, headers=headers, timeout=self.timeout)
        resp.raise_for_status()
        return resp.json()

    def loglik(self, context: str, continuation: str) -> float:
        return float(self._post({"mode": "loglik", "context": context,
                                 "continuation": continuation})["loglik"])

    def generate(self, prompt: str, max_tokens: int) -> str:
        return str(self._post({"mode": "generate", "prompt": prompt,
                               "max_tokens": max_tokens})["text"])


# ---------------------------------------------------------------------------
# Selection, few-shot sampling, generation post-processing
# ---------------------------------------------------------------------------


def select_option(backend: ScorerBackend, instance: ClozeInstance, normalize: bool = True) -> int:
    """Argmax option by (token-normalized) log-likelihood; ties keep the
    lowest index."""
    best_idx = 0
    best_score = None
    for i, option in enumerate(instance.options):
        score = backend.loglik(instance.context, option)
        if normalize:
            score /= max(1, backend.token_count(option))
        if best_score is None or score > best_score:
            best_idx, best_score = i, score
    return best_idx


def _example_key(example: dict) -> str:
    if "id" in example:
        return str(example["id"])
    return json.dumps(example, sort_keys=True, ensure_ascii=False)


def build_fewshot(pool: Sequence[dict], k: int, seed: int, current_example: dict) -> List[dict]:
    """k distinct demonstrations drawn from the pool, never including the
    evaluated example; deterministic per (seed, example id)."""
    if k == 0:
        return []
    if k > 5:
        raise ValueError("at most 5 few-shot examples are supported")
    current_key = _example_key(current_example)
    candidates = [e for e in pool if _example_key(e) != current_key]
    if len(candidates) < k:
        raise ValueError(f"pool has only {len(candidates)} candidates, need {k}")
    rng = Random(f"{seed}:{current_key}")
    return rng.sample(candidates, k)


def _truncate_whitespace_tokens(text: str, max_tokens: int) -> str:
    count = 0
    for m in re.finditer(r"\S+", text):
        count += 1
        if count == max_tokens:
            return text[:m.end()]
    return text


def run_generation(
    backend: ScorerBackend,
    prompt: str,
    mode: str = "base",
    max_tokens: int = 256,
) -> str:
    """Generate an answer: capped at max_tokens; base models are cut at the
    first newline, instruction-tuned models keep the full text."""
    if mode not in ("base", "instructed"):
        raise ValueError(f"unknown generation mode {mode!r}")
    text = backend.generate(prompt, max_tokens)
    text = _truncate_whitespace_tokens(text, max_tokens)
    if mode == "base":
        return text.split("\n", 1)[0]
    return text


# ---------------------------------------------------------------------------
# Metrics over strings
# ---------------------------------------------------------------------------


def metric_accuracy(predictions: Sequence, golds: Sequence) -> float:
    return _accuracy(predictions, golds)


def metric_f1(pred_text: str, gold_text: str, lang: Optional[str] = None) -> float:
    return token_f1(
        simple_tokenize(pred_text, lang, lowercase=True),
        simple_tokenize(gold_text, lang, lowercase=True),
    )


def metric_rouge_avg(pred_text: str, gold_text: str, lang: Optional[str] = None) -> float:
    """Mean of Rouge-1, Rouge-2, and Rouge-L F1."""
    gold = simple_tokenize(gold_text, lang, lowercase=True)
    pred = simple_tokenize(pred_text, lang, lowercase=True)
    r1 = rouge_n(gold, pred, 1).f1
    r2 = rouge_n(gold, pred, 2).f1
    rl = rouge_l(gold, pred).f1
    return (r1 + r2 + rl) / 3.0


def metric_bleu(predictions: Sequence[str], references: Sequence[str],
                lang: Optional[str] = None) -> float:
    cands = [simple_tokenize(p, lang, lowercase=True) for p in predictions]
    refs = [simple_tokenize(r, lang, lowercase=True) for r in references]
    return bleu_corpus(cands, refs)


# ---------------------------------------------------------------------------
# Benchmark runner
# ---------------------------------------------------------------------------


@dataclass
class EvalResult:
    task: str
    languages: Dict[str, float]
    items: List[dict]
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "version": 1,
            "task": self.task,
            "languages": self.languages,
            "config": self.config,
            "items": self.items,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, ensure_ascii=False, indent=2)
            fh.write("\n")


def read_eval_items(path) -> List[dict]:
    items = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                items.append(json.loads(line))
    return items


def run_benchmark(
    task_spec: EvalTaskSpec,
    dataset_path,
    backend: ScorerBackend,
    k_shot: int = 0,
    seed: int = 0,
    mode: str = "base",
    normalize_loglik: bool = True,
) -> EvalResult:
    """Evaluate every item; per-item records carry enough to recompute the
    per-language aggregates. Schema violations are recorded per item and
    excluded from aggregation."""
    items = read_eval_items(dataset_path)
    by_lang: Dict[str, List[dict]] = {}
    for item in items:
        by_lang.setdefault(item.get("lang", "en"), []).append(item)

    records: List[dict] = []
    lang_scores: Dict[str, float] = {}
    for lang in sorted(by_lang):
        lang_items = by_lang[lang]
        preds_for_bleu: List[str] = []
        refs_for_bleu: List[str] = []
        item_scores: List[float] = []
        for item in lang_items:
            record = {"id": _example_key(item), "lang": lang}
            try:
                demos = build_fewshot(lang_items, k_shot, seed, item) if k_shot else []
                instance = format_instance(task_spec, item, demos)
                if task_spec.kind == "classification":
                    pred = select_option(backend, instance, normalize=normalize_loglik)
                    record.update(
                        pred_index=pred,
                        gold_index=instance.gold_index,
                        correct=bool(pred == instance.gold_index),
                    )
                    item_scores.append(1.0 if pred == instance.gold_index else 0.0)
                else:
                    answer = run_generation(backend, instance.prompt, mode=mode)
                    record.update(prediction=answer, targets=instance.targets)
                    if task_spec.metric == "f1":
                        score = max(metric_f1(answer, t, lang) for t in instance.targets)
                        record["f1"] = score
                        item_scores.append(score)
                    elif task_spec.metric == "rouge_avg":
                        score = max(metric_rouge_avg(answer, t, lang) for t in instance.targets)
                        record["rouge_avg"] = score
                        item_scores.append(score)
                    else:  # bleu aggregates at corpus level
                        preds_for_bleu.append(answer)
                        refs_for_bleu.append(instance.targets[0])
            except EvalSchemaError as exc:
                record["error"] = str(exc)
            records.append(record)

        if task_spec.metric == "bleu":
            if preds_for_bleu:
                lang_scores[lang] = metric_bleu(preds_for_bleu, refs_for_bleu, lang)
        elif item_scores:
            lang_scores[lang] = sum(item_scores) / len(item_scores)

    return EvalResult(
        task=task_spec.name,
        languages=lang_scores,
        items=records,
        config={"k_shot": k_shot, "seed": seed, "mode": mode,
                "normalize_loglik": normalize_loglik},
    )
