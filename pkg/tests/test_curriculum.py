import math

import pytest

from polyforge.corpus import Document, corpus_stats
from polyforge.curriculum import (
    MixturePlan,
    MixtureTarget,
    ScheduleConfig,
    learning_rate,
    plan_mixture,
    sample_stage,
)


# -- learning-rate schedule ----------------------------------------------------


@pytest.fixture
def cfg_13b():
    return ScheduleConfig(total_steps=100_000, lr_peak=6e-5)


@pytest.fixture
def cfg_17b():
    return ScheduleConfig(total_steps=100_000, lr_peak=1e-4)


def test_lr_start(cfg_13b):
    assert learning_rate(0, cfg_13b) == 1e-7


def test_lr_peak_at_warmup_end(cfg_13b, cfg_17b):
    assert learning_rate(2000, cfg_13b) == 6e-5
    assert learning_rate(2000, cfg_17b) == 1e-4


def test_lr_final_is_tenth_of_peak(cfg_13b):
    final = learning_rate(cfg_13b.total_steps, cfg_13b)
    assert final == cfg_13b.final_fraction * cfg_13b.lr_peak
    assert final == pytest.approx(6e-6, rel=1e-12)


def test_lr_continuity_at_warmup(cfg_13b):
    w = cfg_13b.warmup_steps
    linear_limit = cfg_13b.lr_start + (cfg_13b.lr_peak - cfg_13b.lr_start) * (w / w)
    final = cfg_13b.final_fraction * cfg_13b.lr_peak
    cosine_limit = final + (cfg_13b.lr_peak - final) * 0.5 * (1.0 + math.cos(0.0))
    assert abs(linear_limit - cfg_13b.lr_peak) < 1e-12
    assert abs(cosine_limit - cfg_13b.lr_peak) < 1e-12
    assert learning_rate(w, cfg_13b) == cfg_13b.lr_peak


def test_lr_monotone_nonincreasing_after_warmup():
    cfg = ScheduleConfig(total_steps=10_000)
    values = [learning_rate(s, cfg) for s in range(cfg.warmup_steps, cfg.total_steps + 1)]
    assert all(b <= a for a, b in zip(values, values[1:]))


def test_lr_monotone_increasing_during_warmup(cfg_13b):
    values = [learning_rate(s, cfg_13b) for s in range(0, cfg_13b.warmup_steps + 1, 50)]
    assert all(b > a for a, b in zip(values, values[1:]))


def test_lr_step_out_of_range(cfg_13b):
    with pytest.raises(ValueError):
        learning_rate(-1, cfg_13b)
    with pytest.raises(ValueError):
        learning_rate(cfg_13b.total_steps + 1, cfg_13b)


def test_schedule_config_validation():
    with pytest.raises(ValueError):
        ScheduleConfig(total_steps=1000)  # warmup 2000 >= total
    with pytest.raises(ValueError):
        ScheduleConfig(total_steps=10_000, lr_start=1e-4, lr_peak=6e-5)
    with pytest.raises(ValueError):
        ScheduleConfig(total_steps=10_000, final_fraction=1.5)


def test_schedule_config_json_roundtrip(cfg_13b):
    assert ScheduleConfig.from_json(cfg_13b.to_json()) == cfg_13b


# -- mixture planning ----------------------------------------------------------


def _docs(spec):
    """spec: list of (source, lang, n_docs, tokens_per_doc)."""
    docs = []
    for source, lang, n_docs, tokens in spec:
        for i in range(n_docs):
            docs.append(Document(
                id=f"{source}-{lang}-{i:05d}",
                text=" ".join(f"{lang}{i}w{j}" for j in range(tokens)),
                source=source,
                lang=lang,
            ))
    return docs


def test_symmetric_manifest_uniform_weights():
    manifest = corpus_stats(_docs([("web", "en", 20, 50), ("web", "fr", 20, 50)]))
    target = MixtureTarget(lang_proportions={"en": 0.5, "fr": 0.5})
    plan = plan_mixture(manifest, target, token_budget=1000)
    weights = {c.lang: c.weight for c in plan.cells}
    assert weights["en"] == pytest.approx(0.5, abs=1e-9)
    assert weights["fr"] == pytest.approx(0.5, abs=1e-9)


def test_non_english_share_raised_to_60_percent():
    # manifest: 70% en, 30% non-en; stage-2 target flips to 40/60
    manifest = corpus_stats(_docs([
        ("web", "en", 70, 100),
        ("web", "fr", 15, 100),
        ("web", "de", 15, 100),
    ]))
    assert manifest.language_share("en") == pytest.approx(0.7)
    target = MixtureTarget(lang_proportions={"en": 0.4, "fr": 0.3, "de": 0.3})
    plan = plan_mixture(manifest, target, token_budget=10_000)
    expected = plan.lang_expected()
    non_en = (expected["fr"] + expected["de"]) / sum(expected.values())
    assert non_en == pytest.approx(0.60, abs=1e-6)


def test_budget_expectations_sum_to_budget():
    manifest = corpus_stats(_docs([
        ("web", "en", 40, 100), ("books", "en", 20, 100), ("web", "fr", 30, 100),
    ]))
    target = MixtureTarget(lang_proportions={"en": 0.6, "fr": 0.4})
    plan = plan_mixture(manifest, target, token_budget=97.0)
    assert sum(c.expected_tokens for c in plan.cells) == pytest.approx(97.0, rel=1e-9)


def test_absent_target_language_errors():
    manifest = corpus_stats(_docs([("web", "en", 10, 50)]))
    target = MixtureTarget(lang_proportions={"en": 0.5, "fr": 0.5})
    with pytest.raises(ValueError):
        plan_mixture(manifest, target, token_budget=100)


def test_unattainable_budget_errors():
    manifest = corpus_stats(_docs([("web", "en", 2, 10), ("web", "fr", 2, 10)]))
    target = MixtureTarget(lang_proportions={"en": 0.5, "fr": 0.5})
    # fr has 20 tokens * max_repeat 4 = 80 capacity < 50% of 1000
    with pytest.raises(ValueError):
        plan_mixture(manifest, target, token_budget=1000, max_repeat=4.0)


def test_cell_expectation_never_exceeds_capacity():
    manifest = corpus_stats(_docs([
        ("web", "en", 100, 100), ("tiny", "en", 1, 10),
    ]))
    target = MixtureTarget(lang_proportions={"en": 1.0},
                           source_quality={"tiny": 100.0})
    plan = plan_mixture(manifest, target, token_budget=5000, max_repeat=4.0)
    for cell in plan.cells:
        assert cell.expected_tokens <= cell.available_tokens * 4.0 + 1e-9


def test_quality_weight_shifts_allocation():
    manifest = corpus_stats(_docs([
        ("clean", "en", 10, 100), ("dirty", "en", 10, 100),
    ]))
    target = MixtureTarget(lang_proportions={"en": 1.0},
                           source_quality={"clean": 3.0, "dirty": 1.0})
    plan = plan_mixture(manifest, target, token_budget=1000)
    by_source = {c.source: c.expected_tokens for c in plan.cells}
    assert by_source["clean"] == pytest.approx(750.0, rel=1e-9)
    assert by_source["dirty"] == pytest.approx(250.0, rel=1e-9)


def test_parallel_boost():
    manifest = corpus_stats(_docs([
        ("web", "fr", 10, 100), ("opus", "fr", 10, 100),
    ]))
    target = MixtureTarget(lang_proportions={"fr": 1.0},
                           parallel_boost=2.0, parallel_sources={"opus"})
    plan = plan_mixture(manifest, target, token_budget=900)
    by_source = {c.source: c.expected_tokens for c in plan.cells}
    assert by_source["opus"] == pytest.approx(600.0, rel=1e-9)


def test_stage2_weights_increase_for_upweighted_langs():
    manifest = corpus_stats(_docs([
        ("web", "en", 80, 100), ("web", "fr", 20, 100),
    ]))
    target = MixtureTarget(lang_proportions={"en": 0.5, "fr": 0.5})
    plan = plan_mixture(manifest, target, token_budget=1000)
    expected = plan.lang_expected()
    total = sum(expected.values())
    for lang in ("fr",):  # target 0.5 > manifest share 0.2
        plan_share = expected[lang] / total
        assert plan_share / manifest.language_share(lang) - 1.0 > 0


def test_target_validation():
    with pytest.raises(ValueError):
        MixtureTarget(lang_proportions={"en": 0.5, "fr": 0.6})


def test_plan_json_roundtrip(tmp_path):
    manifest = corpus_stats(_docs([("web", "en", 10, 50), ("web", "fr", 10, 50)]))
    target = MixtureTarget(lang_proportions={"en": 0.5, "fr": 0.5})
    plan = plan_mixture(manifest, target, token_budget=500)
    path = tmp_path / "plan.json"
    plan.save(path)
    loaded = MixturePlan.load(path)
    assert loaded.to_json() == plan.to_json()


def test_target_json_roundtrip():
    target = MixtureTarget(lang_proportions={"en": 0.4, "fr": 0.6},
                           source_quality={"web": 1.5},
                           parallel_boost=3.0, parallel_sources={"opus"})
    back = MixtureTarget.from_json(target.to_json())
    assert back == target


# -- stage sampling -------------------------------------------------------------


def test_single_language_plan_samples_only_that_language():
    docs = _docs([("web", "en", 20, 20), ("web", "fr", 20, 20)])
    manifest = corpus_stats(docs)
    target = MixtureTarget(lang_proportions={"fr": 1.0})
    plan = plan_mixture(manifest, target, token_budget=600)
    sampled, stats = sample_stage(docs, plan, seed=3)
    assert sampled and all(d.lang == "fr" for d in sampled)
    assert stats.lang_share("fr") == 1.0


def test_two_equal_cells_near_even_split():
    docs = _docs([("web", "en", 200, 50), ("web", "fr", 200, 50)])
    manifest = corpus_stats(docs)
    target = MixtureTarget(lang_proportions={"en": 0.5, "fr": 0.5})
    plan = plan_mixture(manifest, target, token_budget=200_000, max_repeat=50)
    sampled, stats = sample_stage(docs, plan, seed=11)
    assert stats.lang_share("en") == pytest.approx(0.5, abs=0.01)
    assert stats.lang_share("fr") == pytest.approx(0.5, abs=0.01)


def test_same_seed_same_id_sequence():
    docs = _docs([("web", "en", 50, 30), ("web", "fr", 50, 30)])
    manifest = corpus_stats(docs)
    target = MixtureTarget(lang_proportions={"en": 0.5, "fr": 0.5})
    plan = plan_mixture(manifest, target, token_budget=3000)
    first, _ = sample_stage(docs, plan, seed=7)
    second, _ = sample_stage(docs, plan, seed=7)
    assert [d.id for d in first] == [d.id for d in second]
    third, _ = sample_stage(docs, plan, seed=8)
    assert [d.id for d in first] != [d.id for d in third]


def test_empty_cell_with_positive_weight_errors():
    docs = _docs([("web", "en", 10, 30)])
    manifest = corpus_stats(docs + _docs([("web", "fr", 10, 30)]))
    target = MixtureTarget(lang_proportions={"en": 0.5, "fr": 0.5})
    plan = plan_mixture(manifest, target, token_budget=300)
    with pytest.raises(ValueError):
        sample_stage(docs, plan, seed=1)  # fr docs absent from the population
