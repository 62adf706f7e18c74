"""Report rendering: every report writes a delimited table (CSV) next to a
matplotlib figure so results can be consumed by scripts and by eyes."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .corpus import DatasetManifest
from .curriculum import MixturePlan, ScheduleConfig, learning_rate


def write_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _bar_chart(path, labels: Sequence[str], values: Sequence[float],
               title: str, ylabel: str, hline: float = None) -> None:
    fig, ax = plt.subplots(figsize=(max(6, 0.6 * len(labels)), 4))
    ax.bar(range(len(labels)), values, color="#4878b0")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if hline is not None:
        ax.axhline(hline, color="#b04848", linestyle="--", linewidth=1)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _line_chart(path, x: Sequence[float], series: Dict[str, Sequence[float]],
                title: str, xlabel: str, ylabel: str) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, ys in series.items():
        ax.plot(x, ys, label=label, linewidth=1.5)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(series) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def language_distribution_report(manifest: DatasetManifest, out_dir) -> List[Path]:
    """Per-language token distribution: CSV plus bar chart."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "language_distribution.csv"
    png_path = out_dir / "language_distribution.png"
    rows = [(e.lang, e.token_count, f"{e.percentage:.4f}") for e in manifest.languages]
    write_csv(csv_path, ["lang", "token_count", "percentage"], rows)
    _bar_chart(
        png_path,
        [e.lang for e in manifest.languages],
        [e.percentage for e in manifest.languages],
        "Language distribution",
        "share of tokens (%)",
    )
    return [csv_path, png_path]


def compression_report(ratios: Dict[str, float], out_dir) -> List[Path]:
    """Per-language compression rate relative to the baseline (baseline = 1)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "compression_rates.csv"
    png_path = out_dir / "compression_rates.png"
    langs = sorted(ratios)
    write_csv(csv_path, ["lang", "compression_rate"],
              [(l, f"{ratios[l]:.6f}") for l in langs])
    _bar_chart(png_path, langs, [ratios[l] for l in langs],
               "Compression rate vs baseline", "tokens/char ratio", hline=1.0)
    return [csv_path, png_path]


def mixture_report(plan: MixturePlan, manifest: DatasetManifest, out_dir) -> List[Path]:
    """Planned vs available language shares, plus the full cell table."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "mixture_cells.csv"
    png_path = out_dir / "mixture_shares.png"
    write_csv(
        csv_path,
        ["source", "lang", "weight", "expected_tokens", "available_tokens"],
        [
            (c.source, c.lang, f"{c.weight:.8f}", f"{c.expected_tokens:.2f}", c.available_tokens)
            for c in plan.cells
        ],
    )
    expected = plan.lang_expected()
    langs = sorted(expected)
    total = sum(expected.values()) or 1.0
    fig, ax = plt.subplots(figsize=(max(6, 0.8 * len(langs)), 4))
    width = 0.4
    xs = range(len(langs))
    ax.bar([x - width / 2 for x in xs],
           [100 * manifest.language_share(l) for l in langs],
           width, label="available", color="#9aa5b0")
    ax.bar([x + width / 2 for x in xs],
           [100 * expected[l] / total for l in langs],
           width, label=f"plan ({plan.stage})", color="#4878b0")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(langs)
    ax.set_ylabel("share of tokens (%)")
    ax.set_title("Mixture plan language shares")
    ax.legend()
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return [csv_path, png_path]


def lr_schedule_report(cfg: ScheduleConfig, out_dir, points: int = 512) -> List[Path]:
    """The warmup + cosine-decay learning-rate curve."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "lr_schedule.csv"
    png_path = out_dir / "lr_schedule.png"
    steps = sorted({int(round(i * cfg.total_steps / (points - 1))) for i in range(points)})
    rows = [(s, f"{learning_rate(s, cfg):.10e}") for s in steps]
    write_csv(csv_path, ["step", "lr"], rows)
    _line_chart(png_path, steps, {"lr": [learning_rate(s, cfg) for s in steps]},
                "Learning-rate schedule", "step", "learning rate")
    return [csv_path, png_path]


def selfinstruct_report(round_reports, out_dir) -> List[Path]:
    """Per-round pass rates (accepted / generated) per language."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "round_reports.csv"
    png_path = out_dir / "pass_rates.png"
    rows = []
    series: Dict[str, List[float]] = {}
    rounds: List[int] = []
    for report in round_reports:
        rounds.append(report.round_no)
        for lang, r in sorted(report.per_lang.items()):
            rate = r.passed_similarity / r.generated if r.generated else 0.0
            rows.append((report.round_no, lang, r.prompts, r.generated,
                         r.passed_format, r.passed_similarity, f"{rate:.4f}"))
            series.setdefault(lang, []).append(rate * 100)
    write_csv(
        csv_path,
        ["round", "lang", "prompts", "generated", "passed_format",
         "passed_similarity", "pass_rate"],
        rows,
    )
    _line_chart(png_path, rounds, series, "Self-instruct pass rate by round",
                "round", "accepted / generated (%)")
    return [csv_path, png_path]


def eval_report(result, out_dir) -> List[Path]:
    """Per-language benchmark scores."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{result.task}_scores.csv"
    png_path = out_dir / f"{result.task}_scores.png"
    langs = sorted(result.languages)
    write_csv(csv_path, ["lang", "score"],
              [(l, f"{result.languages[l]:.6f}") for l in langs])
    _bar_chart(png_path, langs, [result.languages[l] for l in langs],
               f"{result.task} scores", "score")
    return [csv_path, png_path]
