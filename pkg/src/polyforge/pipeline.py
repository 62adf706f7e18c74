"""End-to-end pipeline orchestration: declared stages run in order over JSONL
document streams, with per-stage accounting that conserves every document."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from . import corpus, curriculum, dedup, filtering, langid

# Partition stages split input into kept + rejects; transform stages re-emit.
STAGE_KINDS = {
    "langid": "partition",
    "filter": "partition",
    "dedup": "partition",
    "sample": "transform",
}


class PipelineError(RuntimeError):
    def __init__(self, message: str, report: "PipelineReport"):
        super().__init__(message)
        self.report = report


@dataclass
class StageConfig:
    name: str
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in STAGE_KINDS:
            raise ValueError(
                f"unknown stage {self.name!r}; known: {sorted(STAGE_KINDS)}"
            )


@dataclass
class PipelineConfig:
    input: str
    output_dir: str
    stages: List[StageConfig]
    seed: int = 0
    workers: int = 1

    @staticmethod
    def from_json(obj: dict) -> "PipelineConfig":
        stages = [
            StageConfig(name=s["name"], options={k: v for k, v in s.items() if k != "name"})
            for s in obj["stages"]
        ]
        return PipelineConfig(
            input=obj["input"],
            output_dir=obj["output_dir"],
            stages=stages,
            seed=obj.get("seed", 0),
            workers=obj.get("workers", 1),
        )

    @staticmethod
    def load(path) -> "PipelineConfig":
        with open(path, encoding="utf-8") as fh:
            return PipelineConfig.from_json(json.load(fh))


@dataclass
class StageReport:
    name: str
    kind: str
    input_count: int = 0
    output_count: int = 0
    dropped_count: int = 0
    seconds: float = 0.0
    output_path: str = ""
    rejects_path: Optional[str] = None

    def to_json(self) -> dict:
        return vars(self).copy()


@dataclass
class PipelineReport:
    stages: List[StageReport] = field(default_factory=list)
    seconds: float = 0.0
    error: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "version": 1,
            "seconds": self.seconds,
            "error": self.error,
            "stages": [s.to_json() for s in self.stages],
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")


def _run_stage(stage: StageConfig, in_path: Path, stage_dir: Path,
               seed: int, workers: int) -> StageReport:
    stage_dir.mkdir(parents=True, exist_ok=True)
    out_path = stage_dir / "kept.jsonl"
    rejects_path = stage_dir / "rejects.jsonl"
    opts = stage.options
    report = StageReport(
        name=stage.name,
        kind=STAGE_KINDS[stage.name],
        output_path=str(out_path),
        rejects_path=str(rejects_path) if STAGE_KINDS[stage.name] == "partition" else None,
    )
    start = time.perf_counter()

    docs = list(corpus.read_documents(in_path))
    report.input_count = len(docs)

    if stage.name == "filter":
        rules = filtering.FilterRules.from_json(opts.get("rules", {}))
        kept, rejected = filtering.filter_documents(docs, rules)
    elif stage.name == "langid":
        model = langid.LangIdModel.load(opts["model"])
        kept, rejected = langid.tag_and_filter(
            docs, model, min_confidence=opts.get("min_confidence", langid.DEFAULT_MIN_CONFIDENCE)
        )
    elif stage.name == "dedup":
        result = dedup.deduplicate(
            docs,
            shingle_cfg=dedup.ShingleConfig(
                mode=opts.get("mode", "auto"),
                k_token=opts.get("k_token", 3),
                k_char=opts.get("k_char", 5),
            ),
            minhash_cfg=dedup.MinHashConfig(
                num_perm=opts.get("num_perm", 128), seed=opts.get("seed", seed)
            ),
            lsh_cfg=dedup.LshConfig(
                bands=opts.get("bands", 16), rows=opts.get("rows", 8)
            ),
            jaccard_threshold=opts.get("threshold", 0.8),
            keep_policy=opts.get("keep_policy", "min_id"),
            workers=opts.get("workers", workers),
        )
        kept, rejected = result.kept, result.removed
    elif stage.name == "sample":
        plan = curriculum.MixturePlan.load(opts["plan"])
        kept, _stats = curriculum.sample_stage(docs, plan, seed=opts.get("seed", seed))
        rejected = []
    else:  # pragma: no cover - guarded by StageConfig
        raise ValueError(f"unknown stage {stage.name!r}")

    report.output_count = corpus.write_documents(kept, out_path)
    if report.rejects_path is not None:
        report.dropped_count = corpus.write_documents(rejected, rejects_path)
        if report.input_count != report.output_count + report.dropped_count:
            raise PipelineError(
                f"stage {stage.name}: {report.input_count} in != "
                f"{report.output_count} out + {report.dropped_count} dropped",
                PipelineReport(stages=[report]),
            )
    report.seconds = time.perf_counter() - start
    return report


def run_pipeline(config: PipelineConfig) -> PipelineReport:
    """Run the declared stages in order. Partition stages must account for
    every document; any stage failure aborts with the partial report attached
    to the raised PipelineError."""
    report = PipelineReport()
    start = time.perf_counter()
    out_root = Path(config.output_dir)
    current_input = Path(config.input)
    if not current_input.exists():
        raise PipelineError(f"input {current_input} does not exist", report)

    for i, stage in enumerate(config.stages):
        stage_dir = out_root / f"{i:02d}_{stage.name}"
        try:
            stage_report = _run_stage(stage, current_input, stage_dir,
                                      config.seed, config.workers)
        except PipelineError:
            raise
        except Exception as exc:
            report.seconds = time.perf_counter() - start
            report.error = f"stage {stage.name}: {exc}"
            raise PipelineError(report.error, report) from exc
        report.stages.append(stage_report)
        current_input = Path(stage_report.output_path)

    report.seconds = time.perf_counter() - start
    return report
