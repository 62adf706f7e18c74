"""polyforge command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 backend/transport error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__, corpus, curriculum, dedup, evalharness, filtering, langid
from . import pipeline as pipeline_mod
from . import report as report_mod
from . import selfinstruct as si
from . import tokenizer as tok

logger = logging.getLogger("polyforge")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_BACKEND = 3


class _UsageError(SystemExit):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise _UsageError(EXIT_USAGE)


class _JsonLogHandler(logging.Handler):
    def emit(self, record):
        line = json.dumps(
            {
                "ts": round(time.time(), 3),
                "level": record.levelname.lower(),
                "logger": record.name,
                "msg": record.getMessage(),
            },
            ensure_ascii=False,
        )
        sys.stderr.write(line + "\n")


def _setup_logging(log_json: bool) -> None:
    root = logging.getLogger()
    root.setLevel(logging.INFO)
    root.handlers.clear()
    if log_json:
        root.addHandler(_JsonLogHandler())
    else:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        root.addHandler(handler)


def _read_docs_list(path):
    errors = []
    docs = list(corpus.read_documents(path, on_error=errors.append))
    for err in errors:
        logger.warning("%s: parse error at line %d: %s", path, err.line, err.message)
    return docs


def _emit(obj) -> None:
    print(json.dumps(obj, ensure_ascii=False, indent=2))


# ---------------------------------------------------------------------------
# corpus
# ---------------------------------------------------------------------------


def _cmd_corpus_stats(args) -> int:
    manifest = corpus.corpus_stats(corpus.read_documents(args.infile))
    manifest.validate()
    if args.out:
        manifest.save(args.out)
    if args.report_dir:
        paths = report_mod.language_distribution_report(manifest, args.report_dir)
        logger.info("wrote %s", ", ".join(str(p) for p in paths))
    _emit(manifest.to_json())
    return EXIT_OK


# ---------------------------------------------------------------------------
# langid
# ---------------------------------------------------------------------------


def _cmd_langid_train(args) -> int:
    corpora = {}
    in_dir = Path(args.indir)
    for path in sorted(in_dir.glob("*.jsonl")):
        corpora[path.stem] = [d.text for d in _read_docs_list(path)]
    for path in sorted(in_dir.glob("*.txt")):
        corpora[path.stem] = [path.read_text(encoding="utf-8")]
    if not corpora:
        raise ValueError(f"no <lang>.jsonl or <lang>.txt corpora found in {in_dir}")
    model = langid.train_langid(corpora, order=args.order, smoothing=args.smoothing)
    model.save(args.out)
    logger.info("trained langid model over %s", ",".join(model.languages))
    return EXIT_OK


def _cmd_langid_tag(args) -> int:
    model = langid.LangIdModel.load(args.model)
    docs = _read_docs_list(args.infile)
    kept, dropped = langid.tag_and_filter(docs, model, min_confidence=args.min_conf)
    corpus.write_documents(kept, args.out)
    if args.rejects:
        corpus.write_documents(dropped, args.rejects)
    _emit({"input": len(docs), "kept": len(kept), "dropped": len(dropped)})
    return EXIT_OK


# ---------------------------------------------------------------------------
# filter
# ---------------------------------------------------------------------------


def _load_rules(path):
    if not path:
        return filtering.FilterRules()
    with open(path, encoding="utf-8") as fh:
        return filtering.FilterRules.from_json(json.load(fh))


def _cmd_filter_rules(args) -> int:
    rules = _load_rules(args.config)
    docs = _read_docs_list(args.infile)
    kept, dropped = filtering.filter_documents(docs, rules)
    corpus.write_documents(kept, args.out)
    if args.rejects:
        corpus.write_documents(dropped, args.rejects)
    reasons = {}
    for doc in dropped:
        reason = doc.meta.get("drop_reason", "unknown")
        reasons[reason] = reasons.get(reason, 0) + 1
    _emit({"input": len(docs), "kept": len(kept), "dropped": len(dropped),
           "drop_reasons": reasons})
    return EXIT_OK


def _cmd_filter_lm_train(args) -> int:
    texts = [d.text for d in _read_docs_list(args.infile)]
    lm = filtering.train_quality_lm(texts, order=args.order, discount=args.discount)
    lm.save(args.out)
    logger.info("trained %d-gram LM, vocab %d", lm.order, lm.vocab_size)
    return EXIT_OK


def _cmd_filter_score(args) -> int:
    lm = filtering.NGramLM.load(args.lm)
    docs = _read_docs_list(args.infile)
    scored = []
    rejected = []
    for doc in docs:
        try:
            ppl = filtering.perplexity(lm, doc.text)
        except ValueError:
            ppl = float("inf")
        doc = doc.with_meta(perplexity=f"{ppl:.4f}")
        if args.drop_above is not None and ppl > args.drop_above:
            rejected.append(doc.with_meta(drop_reason="perplexity"))
        else:
            scored.append(doc)
    corpus.write_documents(scored, args.out)
    if args.rejects:
        corpus.write_documents(rejected, args.rejects)
    _emit({"input": len(docs), "kept": len(scored), "dropped": len(rejected)})
    return EXIT_OK


def _cmd_filter_clf_train(args) -> int:
    positives = [d.text for d in _read_docs_list(args.pos)]
    negatives = [d.text for d in _read_docs_list(args.neg)]
    clf = filtering.train_quality_classifier(
        positives, negatives, hash_dim=args.hash_dim, epochs=args.epochs,
        lr=args.lr, seed=args.seed,
    )
    clf.save(args.out)
    logger.info("trained quality classifier, final loss %.6f", clf.training_losses[-1])
    return EXIT_OK


def _cmd_filter_clf_score(args) -> int:
    clf = filtering.QualityClassifier.load(args.clf)
    docs = _read_docs_list(args.infile)
    out = [d.with_meta(quality_score=f"{filtering.quality_score(clf, d):.6f}") for d in docs]
    corpus.write_documents(out, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# dedup
# ---------------------------------------------------------------------------


def _cmd_dedup(args) -> int:
    docs = _read_docs_list(args.infile)
    result = dedup.deduplicate(
        docs,
        shingle_cfg=dedup.ShingleConfig(mode=args.mode, k_token=args.k_token,
                                        k_char=args.k_char),
        minhash_cfg=dedup.MinHashConfig(num_perm=args.num_perm, seed=args.seed),
        lsh_cfg=dedup.LshConfig(bands=args.bands, rows=args.rows),
        jaccard_threshold=args.threshold,
        keep_policy=args.keep_policy,
        workers=args.workers,
    )
    corpus.write_documents(result.kept, args.out)
    corpus.write_documents(result.removed, args.removed)
    if args.sig_cache:
        items = [(d.id, d.text, d.lang) for d in docs]
        values = dedup.compute_signatures(
            items,
            dedup.ShingleConfig(mode=args.mode, k_token=args.k_token, k_char=args.k_char),
            dedup.MinHashConfig(num_perm=args.num_perm, seed=args.seed),
            workers=args.workers,
        )
        dedup.write_signature_cache(args.sig_cache, [d.id for d in docs], values,
                                    args.num_perm, args.seed)
    _emit({
        "input": len(docs),
        "kept": len(result.kept),
        "removed": len(result.removed),
        "candidate_pairs": result.candidate_pairs,
        "verified_pairs": result.verified_pairs,
    })
    return EXIT_OK


# ---------------------------------------------------------------------------
# tok
# ---------------------------------------------------------------------------


def _cmd_tok_train(args) -> int:
    docs = _read_docs_list(args.infile)
    by_lang = {}
    for doc in docs:
        by_lang.setdefault(doc.lang or corpus.UNK_LANG, []).append(doc.text)
    sizes = {lang: sum(len(t) for t in texts) for lang, texts in by_lang.items()}
    sampling = tok.sampling_weights(sizes, alpha=args.alpha) if len(by_lang) > 1 else None
    model = tok.train_bpe(
        by_lang if sampling else [d.text for d in docs],
        vocab_size=args.vocab_size,
        sampling=sampling,
        seed=args.seed,
    )
    model.save(args.out)
    logger.info("trained BPE model: vocab %d, merges %d", model.vocab_size, len(model.merges))
    return EXIT_OK


def _cmd_tok_encode(args) -> int:
    model = tok.BpeModel.load(args.model)
    text = args.text if args.text is not None else Path(args.infile).read_text(encoding="utf-8")
    ids = model.encode(text)
    print(" ".join(str(i) for i in ids))
    return EXIT_OK


def _cmd_tok_decode(args) -> int:
    model = tok.BpeModel.load(args.model)
    if args.ids is not None:
        ids = [int(x) for x in args.ids.replace(",", " ").split()]
    else:
        ids = [int(x) for x in Path(args.infile).read_text().replace(",", " ").split()]
    print(model.decode(ids), end="")
    return EXIT_OK


def _cmd_tok_compress_report(args) -> int:
    model = tok.BpeModel.load(args.model)
    docs = _read_docs_list(args.infile)
    corpora = {}
    for doc in docs:
        corpora.setdefault(doc.lang or corpus.UNK_LANG, []).append(doc.text)
    if args.baseline_model:
        baseline_model = tok.BpeModel.load(args.baseline_model)
        baseline = {
            lang: tok.tokens_per_char(baseline_model, texts)
            for lang, texts in corpora.items()
        }
    else:
        with open(args.baseline, encoding="utf-8") as fh:
            baseline = {k: float(v) for k, v in json.load(fh).items()}
    ratios = tok.compression_rate(model, corpora, baseline)
    if args.report_dir:
        paths = report_mod.compression_report(ratios, args.report_dir)
        logger.info("wrote %s", ", ".join(str(p) for p in paths))
    _emit({"compression_rate": ratios})
    return EXIT_OK


# ---------------------------------------------------------------------------
# curriculum / schedule
# ---------------------------------------------------------------------------


def _cmd_curriculum_plan(args) -> int:
    manifest = corpus.DatasetManifest.load(args.manifest)
    with open(args.target, encoding="utf-8") as fh:
        target = curriculum.MixtureTarget.from_json(json.load(fh))
    plan = curriculum.plan_mixture(
        manifest, target, token_budget=args.budget,
        stage=args.stage, max_repeat=args.max_repeat,
    )
    plan.save(args.out)
    if args.report_dir:
        paths = report_mod.mixture_report(plan, manifest, args.report_dir)
        logger.info("wrote %s", ", ".join(str(p) for p in paths))
    _emit({"cells": len(plan.cells), "token_budget": plan.token_budget,
           "lang_expected": plan.lang_expected()})
    return EXIT_OK


def _cmd_curriculum_sample(args) -> int:
    plan = curriculum.MixturePlan.load(args.plan)
    docs = _read_docs_list(args.infile)
    sampled, stats = curriculum.sample_stage(docs, plan, seed=args.seed)
    n = corpus.write_documents(sampled, args.out)
    summary = {
        "sampled_documents": n,
        "total_tokens": stats.total_tokens,
        "tokens_per_lang": stats.tokens_per_lang,
    }
    if args.stats:
        with open(args.stats, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")
    _emit(summary)
    return EXIT_OK


def _cmd_schedule_lr(args) -> int:
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = curriculum.ScheduleConfig.from_json(json.load(fh))
    else:
        if args.total_steps is None:
            raise ValueError("provide --config or --total-steps")
        cfg = curriculum.ScheduleConfig(
            total_steps=args.total_steps,
            warmup_steps=args.warmup_steps,
            lr_start=args.lr_start,
            lr_peak=args.lr_peak,
            final_fraction=args.final_fraction,
        )
    if args.report_dir:
        paths = report_mod.lr_schedule_report(cfg, args.report_dir)
        logger.info("wrote %s", ", ".join(str(p) for p in paths))
    if args.step is not None:
        print(f"{curriculum.learning_rate(args.step, cfg):.10e}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# selfinstruct
# ---------------------------------------------------------------------------


def _chat_backend(args) -> si.ChatBackend:
    if args.backend == "mock":
        return si.MockChatBackend(seed=args.mock_seed)
    if not args.backend_url:
        raise ValueError("--backend-url is required for the http backend")
    return si.HttpChatBackend(url=args.backend_url, model=args.model)


def _cmd_selfinstruct_run(args) -> int:
    state_dir = Path(args.state)
    backend = _chat_backend(args)
    if (state_dir / "state.json").exists():
        state = si.SelfInstructState.load(state_dir, log_dir=state_dir / "log")
        logger.info("resuming at round %d, pools %s", state.round_no, state.pool_sizes())
    else:
        if not args.seeds_dir:
            raise ValueError("fresh run needs --seeds-dir with per-language seed JSONL files")
        seeds = si.import_dataset(args.seeds_dir)
        langs = args.langs.split(",") if args.langs else sorted(seeds)
        missing = [l for l in langs if not seeds.get(l)]
        if missing:
            raise ValueError(f"no seeds for language(s): {', '.join(missing)}")
        state = si.SelfInstructState(
            {l: seeds[l] for l in langs}, seed=args.seed, log_dir=state_dir / "log"
        )
    round_cfg = si.RoundConfig(
        prompts_per_round=args.prompts_per_round,
        first_round_prompts=args.first_round_prompts,
        tasks_per_prompt=args.tasks_per_prompt,
        total_rounds=args.rounds,
    )
    policy = si.SimilarityPolicy()
    reports = si.run_rounds(state, backend, round_cfg, policy,
                            rounds=args.rounds, workers=args.workers)
    state.save(state_dir)
    if args.report_dir:
        paths = report_mod.selfinstruct_report(reports, args.report_dir)
        logger.info("wrote %s", ", ".join(str(p) for p in paths))
    _emit({
        "rounds_run": len(reports),
        "pool_sizes": state.pool_sizes(),
        "accepted": sum(r.total_accepted() for r in reports),
    })
    return EXIT_OK


def _cmd_selfinstruct_export(args) -> int:
    state = si.SelfInstructState.load(args.state)
    result = si.export_dataset(state.pools, args.out)
    _emit({"files": result.files, "per_lang": result.per_lang, "total": result.total})
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _scorer_backend(args) -> evalharness.ScorerBackend:
    if args.backend == "stub":
        logliks = {}
        generations = {}
        if args.stub_table:
            with open(args.stub_table, encoding="utf-8") as fh:
                table = json.load(fh)
            logliks = {
                (e["context"], e["continuation"]): float(e["loglik"])
                for e in table.get("logliks", [])
            }
            generations = {e["prompt"]: e["text"] for e in table.get("generations", [])}
        return evalharness.TableStubBackend(logliks=logliks, generations=generations)
    if args.backend == "ngram":
        if not args.train_texts:
            raise ValueError("--train-texts is required for the ngram backend")
        texts = Path(args.train_texts).read_text(encoding="utf-8").splitlines()
        return evalharness.NGramScorerBackend([t for t in texts if t.strip()])
    if not args.backend_url:
        raise ValueError("--backend-url is required for the http backend")
    return evalharness.HttpScorerBackend(url=args.backend_url)


def _cmd_eval_run(args) -> int:
    if args.task not in evalharness.TASKS:
        raise ValueError(f"unknown task {args.task!r}; known: {sorted(evalharness.TASKS)}")
    spec = evalharness.TASKS[args.task]
    backend = _scorer_backend(args)
    result = evalharness.run_benchmark(
        spec, args.data, backend, k_shot=args.shots, seed=args.seed, mode=args.mode,
        normalize_loglik=not args.no_normalize,
    )
    if args.out:
        result.save(args.out)
    if args.report_dir:
        paths = report_mod.eval_report(result, args.report_dir)
        logger.info("wrote %s", ", ".join(str(p) for p in paths))
    _emit({"task": result.task, "languages": result.languages,
           "items": len(result.items)})
    return EXIT_OK


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


def _cmd_pipeline_run(args) -> int:
    config = pipeline_mod.PipelineConfig.load(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.workers is not None:
        config.workers = args.workers
    try:
        report = pipeline_mod.run_pipeline(config)
    except pipeline_mod.PipelineError as exc:
        if args.report:
            exc.report.save(args.report)
        _emit(exc.report.to_json())
        return EXIT_DATA
    if args.report:
        report.save(args.report)
    _emit(report.to_json())
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser wiring
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="polyforge", description=__doc__)
    parser.add_argument("--version", action="version", version=f"polyforge {__version__}")
    parser.add_argument("--seed", type=int, default=0, help="global random seed")
    parser.add_argument("--workers", type=int, default=1, help="worker count")
    parser.add_argument("--log-json", action="store_true",
                        help="emit line-delimited JSON logs on stderr")
    sub = parser.add_subparsers(dest="module", required=True)

    # corpus
    p_corpus = sub.add_parser("corpus", help="document stream utilities")
    corpus_sub = p_corpus.add_subparsers(dest="verb", required=True)
    p = corpus_sub.add_parser("stats", help="per-language/source manifest")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out")
    p.add_argument("--report-dir")
    p.set_defaults(func=_cmd_corpus_stats)

    # langid
    p_langid = sub.add_parser("langid", help="language identification")
    langid_sub = p_langid.add_subparsers(dest="verb", required=True)
    p = langid_sub.add_parser("train")
    p.add_argument("--in", dest="indir", required=True,
                   help="directory of <lang>.jsonl or <lang>.txt corpora")
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--smoothing", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_langid_train)
    p = langid_sub.add_parser("tag")
    p.add_argument("--model", required=True)
    p.add_argument("--min-conf", type=float, default=langid.DEFAULT_MIN_CONFIDENCE)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rejects")
    p.set_defaults(func=_cmd_langid_tag)

    # filter
    p_filter = sub.add_parser("filter", help="quality filtering")
    filter_sub = p_filter.add_subparsers(dest="verb", required=True)
    p = filter_sub.add_parser("rules")
    p.add_argument("--config", help="JSON FilterRules overrides")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rejects")
    p.set_defaults(func=_cmd_filter_rules)
    p = filter_sub.add_parser("lm-train")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--discount", type=float, default=0.75)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_filter_lm_train)
    p = filter_sub.add_parser("score")
    p.add_argument("--lm", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--drop-above", type=float)
    p.add_argument("--rejects")
    p.set_defaults(func=_cmd_filter_score)
    p = filter_sub.add_parser("clf-train")
    p.add_argument("--pos", required=True)
    p.add_argument("--neg", required=True)
    p.add_argument("--hash-dim", type=int, default=1 << 20)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_filter_clf_train)
    p = filter_sub.add_parser("clf-score")
    p.add_argument("--clf", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_filter_clf_score)

    # dedup
    p = sub.add_parser("dedup", help="MinHash-LSH near-duplicate removal")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--removed", required=True)
    p.add_argument("--num-perm", type=int, default=128)
    p.add_argument("--bands", type=int, default=16)
    p.add_argument("--rows", type=int, default=8)
    p.add_argument("--threshold", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--mode", choices=["auto", "char", "token"], default="auto")
    p.add_argument("--k-token", type=int, default=3)
    p.add_argument("--k-char", type=int, default=5)
    p.add_argument("--keep-policy", choices=["min_id", "first_seen"], default="min_id")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--sig-cache", help="also write a PFMH1 signature cache")
    p.set_defaults(func=_cmd_dedup)

    # tok
    p_tok = sub.add_parser("tok", help="BPE tokenizer")
    tok_sub = p_tok.add_subparsers(dest="verb", required=True)
    p = tok_sub.add_parser("train")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--vocab-size", type=int, default=8192)
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_tok_train)
    p = tok_sub.add_parser("encode")
    p.add_argument("--model", required=True)
    p.add_argument("--text")
    p.add_argument("--in", dest="infile")
    p.set_defaults(func=_cmd_tok_encode)
    p = tok_sub.add_parser("decode")
    p.add_argument("--model", required=True)
    p.add_argument("--ids")
    p.add_argument("--in", dest="infile")
    p.set_defaults(func=_cmd_tok_decode)
    p = tok_sub.add_parser("compress-report")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--baseline", help="JSON map lang -> baseline tokens per char")
    p.add_argument("--baseline-model", help="BPE model to use as the baseline")
    p.add_argument("--report-dir")
    p.set_defaults(func=_cmd_tok_compress_report)

    # curriculum
    p_cur = sub.add_parser("curriculum", help="data mixture planning/sampling")
    cur_sub = p_cur.add_subparsers(dest="verb", required=True)
    p = cur_sub.add_parser("plan")
    p.add_argument("--manifest", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--budget", type=float, required=True)
    p.add_argument("--stage", default="stage2")
    p.add_argument("--max-repeat", type=float, default=4.0)
    p.add_argument("--out", required=True)
    p.add_argument("--report-dir")
    p.set_defaults(func=_cmd_curriculum_plan)
    p = cur_sub.add_parser("sample")
    p.add_argument("--plan", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--stats")
    p.set_defaults(func=_cmd_curriculum_sample)

    # schedule
    p_sched = sub.add_parser("schedule", help="training schedule utilities")
    sched_sub = p_sched.add_subparsers(dest="verb", required=True)
    p = sched_sub.add_parser("lr")
    p.add_argument("--step", type=int)
    p.add_argument("--config", help="JSON ScheduleConfig")
    p.add_argument("--total-steps", type=int)
    p.add_argument("--warmup-steps", type=int, default=2000)
    p.add_argument("--lr-start", type=float, default=1e-7)
    p.add_argument("--lr-peak", type=float, default=6e-5)
    p.add_argument("--final-fraction", type=float, default=0.1)
    p.add_argument("--report-dir")
    p.set_defaults(func=_cmd_schedule_lr)

    # selfinstruct
    p_si = sub.add_parser("selfinstruct", help="instruction dataset construction")
    si_sub = p_si.add_subparsers(dest="verb", required=True)
    p = si_sub.add_parser("run")
    p.add_argument("--state", required=True, help="state directory (resumes if present)")
    p.add_argument("--seeds-dir", help="per-language seed JSONL directory for fresh runs")
    p.add_argument("--langs", help="comma-separated language codes")
    p.add_argument("--rounds", type=int, default=10)
    p.add_argument("--backend", choices=["mock", "http"], default="http")
    p.add_argument("--backend-url")
    p.add_argument("--model", default="default")
    p.add_argument("--mock-seed", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--prompts-per-round", type=int, default=100)
    p.add_argument("--first-round-prompts", type=int, default=10)
    p.add_argument("--tasks-per-prompt", type=int, default=17)
    p.add_argument("--report-dir")
    p.set_defaults(func=_cmd_selfinstruct_run)
    p = si_sub.add_parser("export")
    p.add_argument("--state", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_selfinstruct_export)

    # eval
    p_eval = sub.add_parser("eval", help="multilingual benchmark runner")
    eval_sub = p_eval.add_subparsers(dest="verb", required=True)
    p = eval_sub.add_parser("run")
    p.add_argument("--task", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--backend", choices=["stub", "ngram", "http"], default="http")
    p.add_argument("--backend-url")
    p.add_argument("--stub-table", help="JSON tables for the stub backend")
    p.add_argument("--train-texts", help="training text file for the ngram backend")
    p.add_argument("--shots", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=["base", "instructed"], default="base")
    p.add_argument("--no-normalize", action="store_true",
                   help="disable token-count normalization of option log-likelihoods")
    p.add_argument("--out")
    p.add_argument("--report-dir")
    p.set_defaults(func=_cmd_eval_run)

    # pipeline
    p_pipe = sub.add_parser("pipeline", help="multi-stage runs")
    pipe_sub = p_pipe.add_subparsers(dest="verb", required=True)
    p = pipe_sub.add_parser("run")
    p.add_argument("--config", required=True)
    p.add_argument("--report", help="write the pipeline report JSON here")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=_cmd_pipeline_run)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        return exc.code
    _setup_logging(args.log_json)
    import requests

    try:
        return args.func(args)
    except requests.RequestException as exc:
        logger.error("backend error: %s", exc)
        return EXIT_BACKEND
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
