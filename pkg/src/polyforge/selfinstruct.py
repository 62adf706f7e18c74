"""Iterative multilingual self-instruct dataset construction.

Seeds are translated into each target language, then rounds of prompt
construction, chat-backend querying, format checking, redundancy
normalization, and Rouge-L diversity gating grow a per-language task pool
that exports as the instruction dataset.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from random import Random
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .corpus import LANGUAGE_NAMES
from .metrics import rouge_l, simple_tokenize

logger = logging.getLogger(__name__)

NOINPUT = "<noinput>"

MULTIALPACA_LANGS = ("ar", "de", "es", "fr", "id", "ja", "ko", "pt", "ru", "th", "vi")

_LINK_RE = re.compile(r"https?://|www\.")


@dataclass
class SelfInstructTask:
    instruction: str
    input: str
    output: str
    lang: str
    origin: str = "seed"  # "seed" or "round:N"

    def __post_init__(self):
        if not self.instruction:
            raise ValueError("task instruction must be nonempty")

    def to_json(self, with_origin: bool = False) -> dict:
        obj = {
            "instruction": self.instruction,
            "input": self.input,
            "output": self.output,
            "lang": self.lang,
        }
        if with_origin:
            obj["origin"] = self.origin
        return obj

    @staticmethod
    def from_json(obj: dict) -> "SelfInstructTask":
        return SelfInstructTask(
            instruction=obj["instruction"],
            input=obj.get("input", NOINPUT),
            output=obj["output"],
            lang=obj["lang"],
            origin=obj.get("origin", "seed"),
        )


@dataclass
class SimilarityPolicy:
    """Diversity thresholds: pool admission requires all pairwise Rouge-L F1
    strictly below pool_threshold; instruction-input overlap strictly above
    the per-language threshold rejects the task."""

    pool_threshold: float = 0.7
    instr_input_default: float = 0.5
    instr_input_overrides: Dict[str, float] = field(
        default_factory=lambda: {"ko": 0.3, "vi": 0.3, "ar": 0.2}
    )

    def __post_init__(self):
        values = [self.pool_threshold, self.instr_input_default,
                  *self.instr_input_overrides.values()]
        if any(not 0.0 < v < 1.0 for v in values):
            raise ValueError("similarity thresholds must lie in (0, 1)")

    def instr_input_threshold(self, lang: str) -> float:
        return self.instr_input_overrides.get(lang, self.instr_input_default)


@dataclass
class RoundConfig:
    prompts_per_round: int = 100
    first_round_prompts: int = 10
    tasks_per_prompt: int = 17
    seed_demos: int = 2
    pool_demos: int = 1
    total_rounds: int = 10
    max_response_tokens: int = 4096
    retries: int = 3
    retry_base_delay: float = 0.5

    def __post_init__(self):
        if self.seed_demos + self.pool_demos < 1:
            raise ValueError("need at least one demonstration")
        for name in ("prompts_per_round", "first_round_prompts", "tasks_per_prompt",
                     "total_rounds", "max_response_tokens"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class ChatCompletion:
    text: str
    stop_reason: str  # natural | length | error


class ChatBackend:
    """Chat-completion interface; implementations must be swappable."""

    def complete(self, prompt: str, max_tokens: int) -> ChatCompletion:
        raise NotImplementedError


class HttpChatBackend(ChatBackend):
    """Generic chat-completion HTTP endpoint: POST {model, prompt, max_tokens}
    as JSON, expect {text, stop_reason} back. API key comes from the
    POLYFORGE_API_KEY environment variable unless given explicitly."""

    def __init__(self, url: str, model: str = "default", api_key: Optional[str] = None,
                 timeout: float = 120.0):
        import os

        self.url = url
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get("POLYFORGE_API_KEY")
        self.timeout = timeout

    def complete(self, prompt: str, max_tokens: int) -> ChatCompletion:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = requests.post(
                self.url,
                json={"model": self.model, "prompt": prompt, "max_tokens": max_tokens},
                headers=headers,
                timeout=self.timeout,
            )
            resp.raise_for_status()
            payload = resp.json()
            return ChatCompletion(
                text=payload.get("text", ""),
                stop_reason=payload.get("stop_reason", "natural"),
            )
        except Exception as exc:  # transport errors become retryable
            logger.warning("backend request failed: %s", exc)
            return ChatCompletion(text="", stop_reason="error")


_VERBS = (
    "Describe", "Summarize", "Compare", "List", "Explain", "Rewrite", "Classify",
    "Translate", "Draft", "Outline", "Rank", "Identify", "Compose", "Suggest",
    "Evaluate", "Invent", "Estimate", "Annotate", "Sort", "Extract", "Predict",
    "Improve", "Simplify", "Combine", "Contrast", "Derive", "Expand", "Rephrase",
)
_NOUNS = (
    "recipe", "poem", "headline", "schedule", "proverb", "dialogue", "riddle",
    "slogan", "itinerary", "paragraph", "speech", "memo", "review", "glossary",
    "anecdote", "survey", "contract", "lecture", "melody", "formula", "blueprint",
    "manifesto", "sonnet", "bulletin", "catalog", "digest", "fable", "ledger",
)
_TOPICS = (
    "rivers", "markets", "planets", "festivals", "gardens", "engines", "islands",
    "museums", "harvests", "bridges", "libraries", "storms", "deserts", "forests",
    "villages", "orchestras", "mountains", "harbors", "comets", "canyons",
)


class MockChatBackend(ChatBackend):
    """Deterministic stand-in for a live endpoint.

    Responses are a pure function of (seed, prompt): translation prompts get a
    mechanical language-tagged echo, generation prompts get a numbered batch
    of synthetic tasks. Safe to call from multiple threads.
    """

    def __init__(self, seed: int = 0, tasks_per_response: Optional[int] = None):
        self.seed = seed
        self.tasks_per_response = tasks_per_response

    def _rng_for(self, prompt: str) -> Random:
        digest = hashlib.blake2b(
            f"{self.seed}\x1f{prompt}".encode("utf-8"), digest_size=8
        ).digest()
        return Random(int.from_bytes(digest, "little"))

    def complete(self, prompt: str, max_tokens: int) -> ChatCompletion:
        tr = re.search(r"Translate the following task into (\w+)", prompt)
        if tr:
            return self._translate(prompt, tr.group(1))
        return self._generate(prompt)

    def _translate(self, prompt: str, language: str) -> ChatCompletion:
        triple = parse_task_triple(prompt.split("\n\n", 1)[1])
        if triple is None:
            return ChatCompletion(text="", stop_reason="error")
        instruction, task_input, output = triple
        tag = f"[{language}]"
        tagged_input = task_input if task_input == NOINPUT else f"{tag} {task_input}"
        text = (
            f"Instruction: {tag} {instruction}\n"
            f"Input: {tagged_input}\n"
            f"Output: {tag} {output}"
        )
        return ChatCompletion(text=text, stop_reason="natural")

    def _generate(self, prompt: str) -> ChatCompletion:
        count_match = re.search(r"generate the following (\d+) tasks", prompt)
        count = self.tasks_per_response or (int(count_match.group(1)) if count_match else 17)
        rng = self._rng_for(prompt)
        lines: List[str] = []
        for i in range(count):
            n = i + 4  # demos occupy 1..3
            marker = rng.randrange(1_000_000)
            instruction = (
                f"{rng.choice(_VERBS)} a {rng.choice(_NOUNS)} about "
                f"{rng.choice(_TOPICS)} and {rng.choice(_TOPICS)} (case {marker})."
            )
            task_input = NOINPUT if rng.random() < 0.5 else (
                f"Sample {rng.choice(_NOUNS)} covering {rng.choice(_TOPICS)} {marker}."
            )
            output = f"A {rng.choice(_NOUNS)} response regarding {rng.choice(_TOPICS)} {marker}."
            lines.append(f"{n}. Instruction: {instruction}")
            lines.append(f"{n}. Input:")
            lines.append(task_input)
            lines.append(f"{n}. Output:")
            lines.append(output)
        return ChatCompletion(text="\n".join(lines), stop_reason="natural")


class ScriptedChatBackend(ChatBackend):
    """Replays a fixed list of completions in call order (serial tests only)."""

    def __init__(self, completions: Sequence[ChatCompletion]):
        self._completions = list(completions)
        self._calls = 0

    def complete(self, prompt: str, max_tokens: int) -> ChatCompletion:
        if self._calls >= len(self._completions):
            raise RuntimeError("scripted backend exhausted")
        result = self._completions[self._calls]
        self._calls += 1
        return result


# ---------------------------------------------------------------------------
# Prompt construction and response parsing
# ---------------------------------------------------------------------------

PROMPT_HEADER = """You are asked to come up with a set of {total} diverse task instructions. These task instructions will be given to a GPT model and we will evaluate the GPT model for completing the instructions.

Here are the requirements:
1. Try not to repeat the verb for each instruction to maximize diversity.
2. The language used for the instruction also should be diverse. For example, you should combine questions with imperative instructions.
3. The type of instructions should be diverse. The list should include diverse types of tasks like open-ended generation, classification, editing, etc.
4. A GPT language model should be able to complete the instruction. For example, do not ask the assistant to create any visual or audio output. For another example, do not ask the assistant to wake you up at 5pm or set a reminder because it cannot perform any action.
5. The instructions should be in {language}.
6. The instructions should be 1 to 2 sentences long. Either an imperative sentence or a question is permitted.
7. You should generate an appropriate input to the instruction. The input field should contain a specific example provided for the instruction. It should involve realistic data and should not contain simple placeholders. The input should provide substantial content to make the instruction challenging but should ideally not exceed 100 words.
8. Not all instructions require input. For example, when an instruction asks about some general information, "what is the highest peak in the world", it is not necessary to provide a specific context. In this case, we simply put "{noinput}" in the input field.
9. The output should be an appropriate response to the instruction and the input. Make sure the output is less than 200 words.

There are {n_demos} examples.

{demos}
Please generate the following {n_tasks} tasks that are similar to the above examples.
"""

TRANSLATION_PROMPT = """Translate the following task into {language}. Preserve the meaning and reply in exactly this format, with the three labels unchanged:
Instruction: <translated instruction>
Input: <translated input, or {noinput} verbatim if the input is {noinput}>
Output: <translated output>

Instruction: {instruction}
Input: {input}
Output: {output}
"""


def language_name(lang: str) -> str:
    try:
        return LANGUAGE_NAMES[lang]
    except KeyError:
        raise ValueError(f"no display name for language code {lang!r}")


def build_prompt(
    lang: str,
    seed_pool: Sequence[SelfInstructTask],
    task_pool: Sequence[SelfInstructTask],
    round_cfg: RoundConfig,
    rng: Random,
) -> str:
    """Instantiate the generation prompt with sampled demonstrations: two from
    the seeds and one from the pool (all three from seeds in round one)."""
    if len(seed_pool) < round_cfg.seed_demos:
        raise ValueError(
            f"need at least {round_cfg.seed_demos} seed tasks for language {lang!r}"
        )
    demos = list(rng.sample(list(seed_pool), round_cfg.seed_demos))
    if task_pool:
        demos.extend(rng.sample(list(task_pool), min(round_cfg.pool_demos, len(task_pool))))
    else:
        remaining = [t for t in seed_pool if t not in demos]
        needed = round_cfg.pool_demos
        if len(remaining) < needed:
            raise ValueError(f"not enough seed tasks to fill demonstrations for {lang!r}")
        demos.extend(rng.sample(remaining, needed))

    demo_blocks = []
    for i, demo in enumerate(demos, start=1):
        demo_blocks.append(
            f"{i}. Instruction: {demo.instruction}\n"
            f"{i}. Input:\n{demo.input}\n"
            f"{i}. Output:\n{demo.output}\n"
        )
    return PROMPT_HEADER.format(
        total=len(demos) + round_cfg.tasks_per_prompt,
        language=language_name(lang),
        noinput=NOINPUT,
        n_demos=len(demos),
        demos="\n".join(demo_blocks),
        n_tasks=round_cfg.tasks_per_prompt,
    )


_TASK_HEAD = re.compile(r"(?m)^\s*\d+\s*\.\s*Instruction\s*:\s*")
_INPUT_HEAD = re.compile(r"(?m)^\s*\d+\s*\.\s*Input\s*:\s*")
_OUTPUT_HEAD = re.compile(r"(?m)^\s*\d+\s*\.\s*Output\s*:\s*")


@dataclass
class ParsedResponse:
    tasks: List[Tuple[str, str, str]]  # (instruction, input, output)
    blocks: int
    malformed: int


def parse_response(text: str, stop_reason: str = "natural") -> ParsedResponse:
    """Split a completion on the numbered Instruction/Input/Output scaffold.

    The final task is dropped when the response was cut off by the length
    limit; blocks missing any of the three parts are dropped and counted.
    """
    heads = list(_TASK_HEAD.finditer(text))
    blocks = []
    for i, head in enumerate(heads):
        end = heads[i + 1].start() if i + 1 < len(heads) else len(text)
        blocks.append(text[head.end():end])
    n_blocks = len(blocks)
    if stop_reason == "length" and blocks:
        blocks = blocks[:-1]

    tasks: List[Tuple[str, str, str]] = []
    malformed = n_blocks - len(blocks)
    for block in blocks:
        input_m = _INPUT_HEAD.search(block)
        if not input_m:
            malformed += 1
            continue
        output_m = _OUTPUT_HEAD.search(block, input_m.end())
        if not output_m:
            malformed += 1
            continue
        instruction = block[:input_m.start()].strip()
        task_input = block[input_m.end():output_m.start()].strip()
        output = block[output_m.end():].strip()
        if not instruction or not output:
            malformed += 1
            continue
        tasks.append((instruction, task_input if task_input else NOINPUT, output))
    return ParsedResponse(tasks=tasks, blocks=n_blocks, malformed=malformed)


def parse_task_triple(text: str) -> Optional[Tuple[str, str, str]]:
    """Parse a single unnumbered Instruction/Input/Output block (used for
    translation responses)."""
    m = re.search(
        r"Instruction\s*:\s*(?P<instr>.*?)\nInput\s*:\s*(?P<inp>.*?)\nOutput\s*:\s*(?P<out>.*)\Z",
        text,
        re.DOTALL,
    )
    if not m:
        return None
    instruction = m.group("instr").strip()
    task_input = m.group("inp").strip()
    output = m.group("out").strip()
    if not instruction or not output:
        return None
    return instruction, task_input if task_input else NOINPUT, output


# ---------------------------------------------------------------------------
# Redundancy normalization and the diversity gate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Reject:
    reason: str
    score: Optional[float] = None


def normalize_redundancy(
    task: SelfInstructTask,
    policy: SimilarityPolicy,
) -> Union[SelfInstructTask, Reject]:
    """Reject link-bearing tasks; blank inputs that are substrings of the
    instruction; reject tasks whose instruction-input Rouge-L F1 exceeds the
    per-language threshold (strictly greater rejects)."""
    if any(_LINK_RE.search(part) for part in (task.instruction, task.input, task.output)):
        return Reject(reason="link")
    if task.input in ("", NOINPUT):
        if task.input != NOINPUT:
            task = SelfInstructTask(task.instruction, NOINPUT, task.output,
                                    task.lang, task.origin)
        return task
    if task.input in task.instruction:
        return SelfInstructTask(task.instruction, NOINPUT, task.output,
                                task.lang, task.origin)
    score = rouge_l(
        simple_tokenize(task.instruction, task.lang),
        simple_tokenize(task.input, task.lang),
    ).f1
    if score > policy.instr_input_threshold(task.lang):
        return Reject(reason="instr_input_overlap", score=score)
    return task


@dataclass(frozen=True)
class GateResult:
    accepted: bool
    max_score: float


class TaskPool:
    """Accepted tasks for one language, with cached instruction tokens for
    fast pairwise Rouge-L checks."""

    def __init__(self, lang: str, tasks: Iterable[SelfInstructTask] = ()):
        self.lang = lang
        self.tasks: List[SelfInstructTask] = []
        self._tokens: List[List[str]] = []
        self._token_sets: List[set] = []
        for task in tasks:
            self.add(task)

    def __len__(self) -> int:
        return len(self.tasks)

    def add(self, task: SelfInstructTask) -> None:
        if task.lang != self.lang:
            raise ValueError(f"task language {task.lang!r} does not match pool {self.lang!r}")
        tokens = simple_tokenize(task.instruction, self.lang)
        self.tasks.append(task)
        self._tokens.append(tokens)
        self._token_sets.append(set(tokens))

    def max_similarity(self, instruction: str) -> float:
        tokens = simple_tokenize(instruction, self.lang)
        token_set = set(tokens)
        best = 0.0
        for pool_tokens, pool_set in zip(self._tokens, self._token_sets):
            if not (token_set & pool_set):
                continue
            best = max(best, rouge_l(pool_tokens, tokens).f1)
            if best >= 1.0:
                break
        return best


def similarity_gate(
    task: SelfInstructTask,
    pool: Union[TaskPool, Sequence[SelfInstructTask]],
    policy: SimilarityPolicy,
) -> GateResult:
    """Accept iff every pool instruction scores Rouge-L F1 strictly below
    the pool threshold against the new instruction."""
    if not isinstance(pool, TaskPool):
        pool = TaskPool(task.lang, pool)
    score = pool.max_similarity(task.instruction) if len(pool) else 0.0
    return GateResult(accepted=score < policy.pool_threshold, max_score=score)


# ---------------------------------------------------------------------------
# Seed preparation
# ---------------------------------------------------------------------------


@dataclass
class SeedPreparation:
    by_lang: Dict[str, List[SelfInstructTask]]
    skipped: Dict[str, int]


def prepare_seeds(
    english_seeds: Sequence[SelfInstructTask],
    drop_indices: Iterable[int],
    modify_indices: Iterable[int],
    translator: ChatBackend,
    langs: Sequence[str],
    max_tokens: int = 1024,
) -> SeedPreparation:
    """Drop unsuitable seeds, translate the rest into each target language,
    and keep the original input/output verbatim for modify-marked tasks."""
    drop = set(drop_indices)
    modify = set(modify_indices)
    retained = [(i, s) for i, s in enumerate(english_seeds) if i not in drop]

    by_lang: Dict[str, List[SelfInstructTask]] = {}
    skipped: Dict[str, int] = {}
    for lang in langs:
        name = language_name(lang)
        out: List[SelfInstructTask] = []
        misses = 0
        for idx, seed in retained:
            prompt = TRANSLATION_PROMPT.format(
                language=name,
                noinput=NOINPUT,
                instruction=seed.instruction,
                input=seed.input,
                output=seed.output,
            )
            completion = translator.complete(prompt, max_tokens)
            triple = parse_task_triple(completion.text) if completion.stop_reason != "error" else None
            if triple is None:
                logger.warning("seed %d: translation to %s failed, skipping", idx, lang)
                misses += 1
                continue
            instruction, task_input, output = triple
            if idx in modify:
                task_input, output = seed.input, seed.output
            out.append(SelfInstructTask(instruction, task_input, output, lang, origin="seed"))
        by_lang[lang] = out
        skipped[lang] = misses
    return SeedPreparation(by_lang=by_lang, skipped=skipped)


# ---------------------------------------------------------------------------
# Round execution and state
# ---------------------------------------------------------------------------


@dataclass
class RoundLangReport:
    prompts: int = 0
    generated: int = 0
    passed_format: int = 0
    passed_similarity: int = 0


@dataclass
class RoundReport:
    round_no: int
    per_lang: Dict[str, RoundLangReport] = field(default_factory=dict)

    def total_accepted(self) -> int:
        return sum(r.passed_similarity for r in self.per_lang.values())


class SelfInstructState:
    """Per-language seeds and pools plus the RNG stream; serializable so a run
    can stop after any round and resume identically."""

    def __init__(
        self,
        seeds_by_lang: Dict[str, List[SelfInstructTask]],
        seed: int = 0,
        log_dir: Optional[Path] = None,
    ):
        if not seeds_by_lang:
            raise ValueError("state needs at least one language of seeds")
        self.langs = sorted(seeds_by_lang)
        self.seeds = {lang: list(tasks) for lang, tasks in seeds_by_lang.items()}
        self.pools: Dict[str, TaskPool] = {lang: TaskPool(lang) for lang in self.langs}
        self.round_no = 1
        self.rng = Random(seed)
        self.seen_responses: Dict[str, set] = {lang: set() for lang in self.langs}
        self.log_dir = Path(log_dir) if log_dir else None

    def pool_sizes(self) -> Dict[str, int]:
        return {lang: len(self.pools[lang]) for lang in self.langs}

    def _append_log(self, task: SelfInstructTask) -> None:
        if self.log_dir is None:
            return
        self.log_dir.mkdir(parents=True, exist_ok=True)
        path = self.log_dir / f"{task.lang}.log.jsonl"
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(task.to_json(with_origin=True), ensure_ascii=False) + "\n")

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        rng_state = self.rng.getstate()
        meta = {
            "version": 1,
            "langs": self.langs,
            "round_no": self.round_no,
            "rng_state": [rng_state[0], list(rng_state[1]), rng_state[2]],
            "seen_responses": {lang: sorted(h) for lang, h in self.seen_responses.items()},
        }
        with open(directory / "state.json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh)
        for lang in self.langs:
            with open(directory / f"seeds.{lang}.jsonl", "w", encoding="utf-8") as fh:
                for task in self.seeds[lang]:
                    fh.write(json.dumps(task.to_json(with_origin=True), ensure_ascii=False) + "\n")
            with open(directory / f"pool.{lang}.jsonl", "w", encoding="utf-8") as fh:
                for task in self.pools[lang].tasks:
                    fh.write(json.dumps(task.to_json(with_origin=True), ensure_ascii=False) + "\n")

    @staticmethod
    def load(directory, log_dir: Optional[Path] = None) -> "SelfInstructState":
        directory = Path(directory)
        with open(directory / "state.json", encoding="utf-8") as fh:
            meta = json.load(fh)
        seeds = {}
        for lang in meta["langs"]:
            with open(directory / f"seeds.{lang}.jsonl", encoding="utf-8") as fh:
                seeds[lang] = [SelfInstructTask.from_json(json.loads(l)) for l in fh if l.strip()]
        state = SelfInstructState(seeds, log_dir=log_dir)
        state.round_no = meta["round_no"]
        raw = meta["rng_state"]
        state.rng.setstate((raw[0], tuple(raw[1]), raw[2]))
        state.seen_responses = {lang: set(h) for lang, h in meta["seen_responses"].items()}
        for lang in meta["langs"]:
            pool_path = directory / f"pool.{lang}.jsonl"
            if pool_path.exists():
                with open(pool_path, encoding="utf-8") as fh:
                    for line in fh:
                        if line.strip():
                            state.pools[lang].add(SelfInstructTask.from_json(json.loads(line)))
        return state


def _query_with_retries(
    backend: ChatBackend, prompt: str, round_cfg: RoundConfig
) -> ChatCompletion:
    delay = round_cfg.retry_base_delay
    for attempt in range(round_cfg.retries):
        completion = backend.complete(prompt, round_cfg.max_response_tokens)
        if completion.stop_reason != "error":
            return completion
        if attempt + 1 < round_cfg.retries and delay > 0:
            time.sleep(delay)
            delay *= 2
    return ChatCompletion(text="", stop_reason="error")


def run_round(
    state: SelfInstructState,
    backend: ChatBackend,
    round_cfg: RoundConfig,
    policy: SimilarityPolicy,
    rng: Optional[Random] = None,
    workers: int = 1,
) -> RoundReport:
    """One collection round: build prompts, query, parse, normalize, gate, and
    grow the pools. Responses are processed in prompt order, so results are
    deterministic for any worker count. A failing prompt is logged and
    skipped; the round never aborts."""
    rng = rng if rng is not None else state.rng
    report = RoundReport(round_no=state.round_no)

    for lang in state.langs:
        pool = state.pools[lang]
        n_prompts = round_cfg.first_round_prompts if len(pool) == 0 else round_cfg.prompts_per_round
        prompts = [
            build_prompt(lang, state.seeds[lang], pool.tasks, round_cfg, rng)
            for _ in range(n_prompts)
        ]

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool_exec:
                completions = list(
                    pool_exec.map(lambda p: _query_with_retries(backend, p, round_cfg), prompts)
                )
        else:
            completions = [_query_with_retries(backend, p, round_cfg) for p in prompts]

        lang_report = RoundLangReport(prompts=n_prompts)
        for completion in completions:
            if completion.stop_reason == "error":
                logger.warning("prompt failed after retries (lang=%s), skipping", lang)
                continue
            response_hash = hashlib.blake2b(
                completion.text.encode("utf-8"), digest_size=16
            ).hexdigest()
            if response_hash in state.seen_responses[lang]:
                continue
            state.seen_responses[lang].add(response_hash)

            parsed = parse_response(completion.text, completion.stop_reason)
            lang_report.generated += parsed.blocks
            for instruction, task_input, output in parsed.tasks:
                task = SelfInstructTask(
                    instruction, task_input, output, lang, origin=f"round:{state.round_no}"
                )
                normalized = normalize_redundancy(task, policy)
                if isinstance(normalized, Reject):
                    continue
                lang_report.passed_format += 1
                gate = similarity_gate(normalized, pool, policy)
                if gate.accepted:
                    pool.add(normalized)
                    state._append_log(normalized)
                    lang_report.passed_similarity += 1
        report.per_lang[lang] = lang_report

    state.round_no += 1
    return report


def run_rounds(
    state: SelfInstructState,
    backend: ChatBackend,
    round_cfg: RoundConfig,
    policy: SimilarityPolicy,
    rounds: Optional[int] = None,
    workers: int = 1,
) -> List[RoundReport]:
    """Drive `rounds` rounds (default: the configured total)."""
    n = rounds if rounds is not None else round_cfg.total_rounds
    return [run_round(state, backend, round_cfg, policy, workers=workers) for _ in range(n)]


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


@dataclass
class ExportReport:
    files: int
    per_lang: Dict[str, int]

    @property
    def total(self) -> int:
        return sum(self.per_lang.values())


def export_dataset(pools: Dict[str, TaskPool], out_dir) -> ExportReport:
    """Write one JSONL per language; re-reading yields the pool exactly."""
    if not any(len(p) for p in pools.values()):
        raise ValueError("task pool is empty, nothing to export")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    per_lang: Dict[str, int] = {}
    files = 0
    for lang in sorted(pools):
        pool = pools[lang]
        if len(pool) == 0:
            continue
        path = out_dir / f"{lang}.jsonl"
        with open(path, "w", encoding="utf-8") as fh:
            for task in pool.tasks:
                fh.write(json.dumps(task.to_json(), ensure_ascii=False) + "\n")
        per_lang[lang] = len(pool)
        files += 1
    return ExportReport(files=files, per_lang=per_lang)


def import_dataset(directory) -> Dict[str, List[SelfInstructTask]]:
    directory = Path(directory)
    out: Dict[str, List[SelfInstructTask]] = {}
    for path in sorted(directory.glob("*.jsonl")):
        lang = path.stem
        with open(path, encoding="utf-8") as fh:
            out[lang] = [SelfInstructTask.from_json(json.loads(l)) for l in fh if l.strip()]
    return out
