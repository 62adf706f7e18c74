import json

import pytest

from polyforge.evalharness import (
    ClozeInstance,
    EvalSchemaError,
    EvalTaskSpec,
    GenerationInstance,
    NGramScorerBackend,
    TASKS,
    TableStubBackend,
    build_fewshot,
    format_instance,
    metric_accuracy,
    metric_bleu,
    metric_f1,
    metric_rouge_avg,
    run_benchmark,
    run_generation,
    select_option,
)


def _write_jsonl(tmp_path, items, name="data.jsonl"):
    path = tmp_path / name
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item, ensure_ascii=False) + "\n")
    return path


# -- task registry ---------------------------------------------------------------


def test_task_metric_pairings():
    assert TASKS["xnli"].kind == "classification"
    assert TASKS["xnli"].metric == "accuracy"
    assert TASKS["tydiqa"].metric == "f1"
    assert TASKS["mtg_sum"].metric == "rouge_avg"
    assert TASKS["wmt20"].metric == "bleu"
    for name in ("xnli", "xcopa", "pawsx", "xwinograd", "tydiqa",
                 "mtg_sg", "mtg_tg", "mtg_qg", "mtg_sum", "wmt20"):
        assert name in TASKS


def test_invalid_pairing_rejected():
    with pytest.raises(ValueError):
        EvalTaskSpec("bad", "classification", "bleu")


# -- formatting -------------------------------------------------------------------


XNLI_ITEM = {
    "premise": "Using these eight simple techniques, you can fabricate a news story in the comfort of your own home.",
    "hypothesis": "Only news reporters in a newsroom can write a news story, and it takes 20 steps to do it.",
    "label": 2,
    "lang": "en",
}


def test_xnli_yes_also_no_options():
    instance = format_instance(TASKS["xnli"], XNLI_ITEM)
    assert isinstance(instance, ClozeInstance)
    assert instance.context.endswith(", right? ")
    assert [o.split(",")[0] for o in instance.options] == ["Yes", "Also", "No"]
    assert instance.gold_index == 2
    assert all(XNLI_ITEM["hypothesis"] in o for o in instance.options)


def test_xnli_string_labels():
    item = dict(XNLI_ITEM, label="entailment")
    assert format_instance(TASKS["xnli"], item).gold_index == 0


def test_xcopa_cause_connective():
    item = {
        "premise": "Il cursore sullo schermo del computer si è mosso.",
        "choice1": "L'utente ha spostato il mouse.",
        "choice2": "L'utente ha cliccato il mouse.",
        "question": "cause",
        "label": 0,
        "lang": "it",
    }
    instance = format_instance(TASKS["xcopa"], item)
    assert instance.context.endswith(" because ")
    assert len(instance.options) == 2
    assert instance.options[0].startswith("l'utente")  # first letter lowered


def test_xcopa_effect_connective():
    item = {"premise": "It rained.", "choice1": "The ground got wet.",
            "choice2": "The sun shone.", "question": "effect", "label": 0}
    instance = format_instance(TASKS["xcopa"], item)
    assert " therefore " in instance.context


def test_pawsx_yes_no():
    item = {"sentence1": "A first sentence.", "sentence2": "A second sentence.",
            "label": 1, "lang": "en"}
    instance = format_instance(TASKS["pawsx"], item)
    assert instance.options[0].startswith("Yes, ")
    assert instance.options[1].startswith("No, ")
    assert instance.gold_index == 0
    assert format_instance(TASKS["pawsx"], dict(item, label=0)).gold_index == 1


def test_xwinograd_blank_split():
    item = {
        "sentence": "He put snow on the smiley face because _ was wet.",
        "option1": "snow",
        "option2": "the smiley face",
        "label": 0,
        "lang": "en",
    }
    instance = format_instance(TASKS["xwinograd"], item)
    assert instance.context == "He put snow on the smiley face because "
    assert instance.options == ["snow was wet.", "the smiley face was wet."]


def test_tydiqa_prompt_shape():
    item = {"context": "Football games last 60 minutes.", "question": "How long?",
            "answers": ["60 minutes"], "lang": "en"}
    instance = format_instance(TASKS["tydiqa"], item)
    assert isinstance(instance, GenerationInstance)
    assert "Read the context and answer the question in one or a few words in English." in instance.prompt
    assert instance.prompt.endswith("Answer:")
    assert instance.targets == ["60 minutes"]


def test_wmt20_translate_sentence_line():
    item = {"source": "Oil falls after Iran claims US offered to remove sanctions",
            "target": "Öl fällt", "src_lang": "en", "tgt_lang": "de", "lang": "de"}
    instance = format_instance(TASKS["wmt20"], item)
    assert "Translate this sentence from English to German." in instance.prompt


def test_mtg_templates():
    item = {"input": "document body", "target": "the title", "lang": "en"}
    assert "generate a title" in format_instance(TASKS["mtg_tg"], item).prompt
    assert format_instance(TASKS["mtg_tg"], item).prompt.endswith("title:")
    assert "story ending:" in format_instance(TASKS["mtg_sg"], item).prompt
    assert "short summary" in format_instance(TASKS["mtg_sum"], item).prompt
    qg = format_instance(TASKS["mtg_qg"], dict(item, answer="a concept"))
    assert "question:" in qg.prompt and "answer: a concept" in qg.prompt


def test_missing_field_raises_schema_error():
    with pytest.raises(EvalSchemaError):
        format_instance(TASKS["xnli"], {"premise": "only premise"})
    with pytest.raises(EvalSchemaError):
        format_instance(TASKS["tydiqa"], {"context": "c", "question": "q"})


def test_fewshot_demos_prepended():
    demo = dict(XNLI_ITEM, label=0)
    instance = format_instance(TASKS["xnli"], XNLI_ITEM, [demo])
    assert instance.context.count("right?") == 2
    assert instance.context.startswith(XNLI_ITEM["premise"][:20])


def test_cloze_instance_validation():
    with pytest.raises(ValueError):
        ClozeInstance(context="c", options=["only one"], gold_index=0)
    with pytest.raises(ValueError):
        ClozeInstance(context="c", options=["a", "b"], gold_index=5)


# -- option selection --------------------------------------------------------------


def _instance(options, gold=0):
    return ClozeInstance(context="ctx ", options=options, gold_index=gold)


def test_argmax_without_normalization():
    instance = _instance(["a", "b", "c"])
    backend = TableStubBackend(logliks={("ctx ", "a"): -5.0, ("ctx ", "b"): -1.0,
                                        ("ctx ", "c"): -9.0})
    assert select_option(backend, instance, normalize=False) == 1


def test_token_normalized_selection():
    # -4 over 2 tokens (-2/token) beats -3 over 1 token (-3/token)
    instance = _instance(["two tokens", "one"])
    backend = TableStubBackend(logliks={("ctx ", "two tokens"): -4.0,
                                        ("ctx ", "one"): -3.0})
    assert select_option(backend, instance, normalize=True) == 0
    # without normalization the raw sum wins instead
    assert select_option(backend, instance, normalize=False) == 1


def test_tie_breaks_to_lowest_index():
    instance = _instance(["a", "b", "c"])
    backend = TableStubBackend(default_loglik=-2.0)
    assert select_option(backend, instance) == 0


def test_affine_scaling_invariance():
    options = ["alpha", "beta", "gamma"]
    base = {("ctx ", "alpha"): -7.0, ("ctx ", "beta"): -2.0, ("ctx ", "gamma"): -11.0}
    instance = _instance(options)
    plain = select_option(TableStubBackend(logliks=base), instance, normalize=False)
    for a, b in [(2.0, 0.0), (0.5, -3.0), (10.0, 5.0)]:
        scaled = {k: a * v + b for k, v in base.items()}
        got = select_option(TableStubBackend(logliks=scaled), instance, normalize=False)
        assert got == plain
    # pure positive scaling also survives normalization (equal token counts)
    for a in (2.0, 0.25):
        scaled = {k: a * v for k, v in base.items()}
        got = select_option(TableStubBackend(logliks=scaled), instance, normalize=True)
        assert got == plain


# -- few-shot sampling --------------------------------------------------------------


def test_zero_shot_empty():
    assert build_fewshot([{"id": 1}], 0, 7, {"id": 1}) == []


def test_pool_of_only_current_errors():
    with pytest.raises(ValueError):
        build_fewshot([{"id": 1}], 1, 7, {"id": 1})


def test_k_above_five_rejected():
    pool = [{"id": i} for i in range(10)]
    with pytest.raises(ValueError):
        build_fewshot(pool, 6, 7, pool[0])


def test_fewshot_reproducible_and_never_current():
    pool = [{"id": i, "x": i} for i in range(12)]
    current = pool[3]
    first = build_fewshot(pool, 5, 42, current)
    second = build_fewshot(pool, 5, 42, current)
    assert first == second
    assert len(first) == 5
    assert current not in first
    assert len({json.dumps(d) for d in first}) == 5


# -- generation post-processing ------------------------------------------------------


def test_base_mode_truncates_at_newline():
    backend = TableStubBackend(generations={"p": "line1\nline2"})
    assert run_generation(backend, "p", mode="base") == "line1"


def test_instructed_mode_keeps_everything():
    backend = TableStubBackend(generations={"p": "line1\nline2"})
    assert run_generation(backend, "p", mode="instructed") == "line1\nline2"


def test_generation_capped_at_256_tokens():
    long_text = " ".join(f"w{i}" for i in range(300))
    backend = TableStubBackend(generations={"p": long_text})
    out = run_generation(backend, "p", mode="instructed")
    assert len(out.split()) == 256


def test_unknown_mode_rejected():
    with pytest.raises(ValueError):
        run_generation(TableStubBackend(), "p", mode="chatty")


# -- metrics ---------------------------------------------------------------------


def test_metric_identity_values():
    assert metric_accuracy([1, 0, 2], [1, 0, 2]) == 1.0
    assert metric_f1("the cat sat", "the cat sat") == 1.0
    assert metric_rouge_avg("the cat sat", "the cat sat") == pytest.approx(1.0)
    assert metric_bleu(["the cat sat on the mat"], ["the cat sat on the mat"]) == \
        pytest.approx(100.0, abs=1e-9)


def test_metric_disjoint_values():
    assert metric_f1("aa bb", "cc dd") == 0.0
    assert metric_rouge_avg("aa bb", "cc dd") == 0.0
    assert metric_bleu(["aa bb"], ["cc dd"]) == 0.0


def test_metric_f1_hand_case():
    assert metric_f1("the cat", "the cat sat") == pytest.approx(0.8)


# -- benchmark runner ----------------------------------------------------------------


def _oracle_backend(spec, items):
    logliks = {}
    generations = {}
    for item in items:
        instance = format_instance(spec, item)
        if isinstance(instance, ClozeInstance):
            logliks[(instance.context, instance.options[instance.gold_index])] = -1.0
        else:
            generations[instance.prompt] = instance.targets[0]
    return TableStubBackend(logliks=logliks, generations=generations)


def _xnli_items(n=6):
    return [
        {"id": i, "premise": f"Premise number {i} states a fact.",
         "hypothesis": f"Hypothesis {i} replies.", "label": i % 3,
         "lang": "en" if i % 2 else "de"}
        for i in range(n)
    ]


def test_oracle_backend_scores_one_on_classification(tmp_path):
    items = _xnli_items()
    path = _write_jsonl(tmp_path, items)
    backend = _oracle_backend(TASKS["xnli"], items)
    result = run_benchmark(TASKS["xnli"], path, backend)
    assert set(result.languages) == {"en", "de"}
    assert all(v == 1.0 for v in result.languages.values())


def test_adversarial_backend_scores_zero_on_two_option_task(tmp_path):
    items = [
        {"id": i, "sentence1": f"Sentence {i}.", "sentence2": f"Other {i}.",
         "label": i % 2, "lang": "en"}
        for i in range(4)
    ]
    path = _write_jsonl(tmp_path, items)
    # give the WRONG option the higher loglik
    logliks = {}
    for item in items:
        inst = format_instance(TASKS["pawsx"], item)
        wrong = 1 - inst.gold_index
        logliks[(inst.context, inst.options[wrong])] = -1.0
    result = run_benchmark(TASKS["pawsx"], path, TableStubBackend(logliks=logliks))
    assert result.languages["en"] == 0.0


def test_oracle_backend_scores_one_on_generation(tmp_path):
    tydiqa = [
        {"id": i, "context": f"Context {i}.", "question": f"Question {i}?",
         "answers": [f"answer {i}"], "lang": "en"}
        for i in range(4)
    ]
    path = _write_jsonl(tmp_path, tydiqa)
    result = run_benchmark(TASKS["tydiqa"], path, _oracle_backend(TASKS["tydiqa"], tydiqa))
    assert result.languages["en"] == pytest.approx(1.0)

    mtg = [{"id": i, "input": f"Document {i}.", "target": f"title {i}", "lang": "en"}
           for i in range(3)]
    path = _write_jsonl(tmp_path, mtg, "mtg.jsonl")
    result = run_benchmark(TASKS["mtg_tg"], path, _oracle_backend(TASKS["mtg_tg"], mtg))
    assert result.languages["en"] == pytest.approx(1.0)

    wmt = [{"id": i, "source": f"Source sentence {i} here today.",
            "target": f"Ziel Satz {i} hier heute.", "src_lang": "en",
            "tgt_lang": "de", "lang": "de"} for i in range(3)]
    path = _write_jsonl(tmp_path, wmt, "wmt.jsonl")
    result = run_benchmark(TASKS["wmt20"], path, _oracle_backend(TASKS["wmt20"], wmt))
    assert result.languages["de"] == pytest.approx(100.0, abs=1e-9)


def test_aggregates_recomputable_from_item_records(tmp_path):
    items = _xnli_items(9)
    path = _write_jsonl(tmp_path, items)
    backend = _oracle_backend(TASKS["xnli"], items[:5])  # oracle for some, wrong for rest
    result = run_benchmark(TASKS["xnli"], path, backend)
    for lang, score in result.languages.items():
        records = [r for r in result.items if r["lang"] == lang and "error" not in r]
        recomputed = sum(1.0 for r in records if r["correct"]) / len(records)
        assert recomputed == pytest.approx(score)


def test_schema_violations_reported_per_item(tmp_path):
    items = _xnli_items(3) + [{"id": 99, "premise": "no hypothesis", "lang": "en"}]
    path = _write_jsonl(tmp_path, items)
    result = run_benchmark(TASKS["xnli"], path, _oracle_backend(TASKS["xnli"], items[:3]))
    errors = [r for r in result.items if "error" in r]
    assert len(errors) == 1
    assert errors[0]["id"] == "99"


def test_benchmark_deterministic(tmp_path):
    items = _xnli_items(8)
    path = _write_jsonl(tmp_path, items)
    backend = _oracle_backend(TASKS["xnli"], items)
    a = run_benchmark(TASKS["xnli"], path, backend, k_shot=0, seed=5)
    b = run_benchmark(TASKS["xnli"], path, backend, k_shot=0, seed=5)
    assert a.to_json() == b.to_json()


def test_result_save(tmp_path):
    items = _xnli_items(3)
    path = _write_jsonl(tmp_path, items)
    result = run_benchmark(TASKS["xnli"], path, _oracle_backend(TASKS["xnli"], items))
    out = tmp_path / "results.json"
    result.save(out)
    loaded = json.loads(out.read_text())
    assert loaded["version"] == 1
    assert loaded["task"] == "xnli"
    assert loaded["languages"] == result.languages


def test_ngram_backend_is_deterministic_scorer():
    backend = NGramScorerBackend(["the cat sat on the mat", "the dog sat on the log"])
    a = backend.loglik("the cat ", "sat")
    b = backend.loglik("the cat ", "sat")
    assert a == b
    assert backend.loglik("the cat ", "sat") > backend.loglik("the cat ", "zzz")
    text = backend.generate("the ", 8)
    assert text == backend.generate("the ", 8)
