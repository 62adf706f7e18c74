import math
import random

import pytest

from polyforge.corpus import Document
from polyforge.filtering import (
    FilterRules,
    NGramLM,
    QualityClassifier,
    apply_document_filters,
    apply_line_corrections,
    filter_documents,
    perplexity,
    perplexity_threshold,
    quality_score,
    repetition_profile,
    train_quality_classifier,
    train_quality_lm,
)

from oracles import chain_rule_perplexity

CLEAN_PROSE = (
    "The harbor town woke early, with fishermen hauling nets along the quay.\n"
    "Traders arranged crates of fruit while gulls circled the market square.\n"
    "By noon the narrow streets filled with visitors from the nearby valley,\n"
    "and the bakery on the corner had sold every last loaf of rye bread.\n"
)


def _doc(text, i=0):
    return Document(id=f"f{i}", text=text, source="web")


# -- repetition ---------------------------------------------------------------


def test_line_dup_four_identical_lines():
    profile = repetition_profile("same line\nsame line\nsame line\nsame line")
    assert profile.line_dup_frac == pytest.approx(0.75)


def test_all_unique_lines_zero():
    profile = repetition_profile("alpha\nbeta\ngamma\n\ndelta par")
    assert profile.line_dup_frac == 0.0
    assert profile.para_dup_frac == 0.0
    assert all(v == 0.0 for v in profile.ngram_dup_frac.values())


def test_empty_doc_zero_fractions():
    profile = repetition_profile("")
    assert profile.line_dup_frac == 0.0
    assert profile.para_dup_frac == 0.0
    assert all(v == 0.0 for v in profile.ngram_dup_frac.values())


def test_ngram_dup_hand_count():
    # "a b a b": 2-grams are {"a b", "b a", "a b"}; second "a b" repeats
    profile = repetition_profile("a b a b", n_values=(2,))
    assert profile.ngram_dup_frac[2] == pytest.approx(1.0 / 3.0)


def test_paragraph_dup():
    text = "para one here\n\npara two here\n\npara one here"
    profile = repetition_profile(text)
    assert profile.para_dup_frac == pytest.approx(13 / 39)


# -- document filters ---------------------------------------------------------


def test_short_doc_dropped_with_reason():
    rules = FilterRules(min_doc_chars=100)
    decision = apply_document_filters(_doc("tiny."), rules)
    assert not decision.keep
    assert decision.reason == "min_doc_chars"


def test_clean_prose_kept():
    decision = apply_document_filters(_doc(CLEAN_PROSE), FilterRules())
    assert decision.keep


def test_first_violation_in_fixed_order():
    # violates both line repetition and min length; repetition is checked first
    rules = FilterRules(min_doc_chars=1000)
    text = "dup line\n" * 10
    decision = apply_document_filters(_doc(text), rules)
    assert decision.reason == "line_dup_frac"


def test_symbol_ratio_filter():
    text = "words # here # with # lots # of # hashes # \n" + CLEAN_PROSE
    decision = apply_document_filters(_doc(text), FilterRules(max_symbol_to_word_ratio=0.01))
    assert decision.reason == "symbol_to_word_ratio"


def test_ellipsis_filter():
    # every trailing line ends with an ellipsis but shares no n-grams
    words = iter(
        "harbor lantern meadow copper violin saddle thistle anchor marble quarry "
        "ribbon falcon timber orchid hammer velvet signal walnut candle parlor "
        "summit garnet willow bastion cinder drover ember flagon gusset hollow".split()
    )
    lines = ["steady line up front is long enough to pass the checks"]
    lines += [" ".join(next(words) for _ in range(3)) + "..." for _ in range(9)]
    decision = apply_document_filters(
        _doc("\n".join(lines)),
        FilterRules(max_ellipsis_line_frac=0.3, max_symbol_to_word_ratio=1.0),
    )
    assert decision.reason == "ellipsis_line_frac"


def test_digit_fraction_filter():
    numbers = " ".join(str(10_000 + 7 * i) for i in range(40))
    text = "norm text " + numbers + " " + CLEAN_PROSE[:60]
    decision = apply_document_filters(_doc(text), FilterRules(max_digit_frac=0.2))
    assert decision.reason == "digit_frac"


def test_invisible_char_filter():
    text = CLEAN_PROSE + "​" * 50
    decision = apply_document_filters(_doc(text), FilterRules())
    assert decision.reason == "invisible_char_frac"


def test_rules_validation():
    with pytest.raises(ValueError):
        FilterRules(max_line_dup_frac=1.5)
    with pytest.raises(ValueError):
        FilterRules(min_doc_chars=100, max_doc_chars=50)


def test_rules_json_roundtrip():
    rules = FilterRules(max_line_dup_frac=0.4, max_ngram_dup_frac={2: 0.5, 3: 0.4})
    assert FilterRules.from_json(rules.to_json()) == rules


# -- line corrections ---------------------------------------------------------


def test_whitespace_standardization():
    doc = apply_line_corrections(_doc("a   b\t c"), FilterRules())
    assert doc.text == "a b c"


def test_url_line_removed():
    doc = apply_line_corrections(
        _doc("keep this line\nvisit http://x.example/spam now\nand this"),
        FilterRules(),
    )
    assert doc.text == "keep this line\nand this"


def test_long_word_removed():
    rules = FilterRules(max_word_length=10)
    doc = apply_line_corrections(_doc("short " + "x" * 50 + " words"), rules)
    assert doc.text == "short words"


def test_corrections_idempotent():
    rng = random.Random(11)
    pieces = ["word", "  ", "\t", "http://spam.example", "\n", "y" * 1200, "ok."]
    rules = FilterRules()
    for _ in range(50):
        text = "".join(rng.choice(pieces) for _ in range(rng.randrange(0, 30)))
        once = apply_line_corrections(_doc(text), rules)
        twice = apply_line_corrections(once, rules)
        assert twice.text == once.text


def test_filter_documents_partition(make_doc):
    docs = [
        make_doc(0, CLEAN_PROSE),
        make_doc(1, "tiny"),
        make_doc(2, "dup\n" * 30),
    ]
    kept, dropped = filter_documents(docs, FilterRules())
    assert len(kept) + len(dropped) == len(docs)
    assert all("drop_reason" in d.meta for d in dropped)


# -- n-gram LM ----------------------------------------------------------------


def test_lm_hand_computed_probs():
    # "a b a b", order 2, discount 0.75:
    #   unigrams: N=4, types=2, V={a, b, <unk>}
    #   P1(a) = (2-0.75)/4 + 0.75*2/4 * 1/3 = 0.4375
    #   P(b|a) = (2-0.75)/2 + 0.75*1/2 * P1(b) = 0.7890625
    #   P(a|a) = 0 + 0.375 * 0.4375 = 0.1640625
    lm = train_quality_lm(["a b a b"], order=2, discount=0.75)
    assert lm.prob("a") == pytest.approx(0.4375, abs=1e-12)
    assert lm.prob("b", ("a",)) == pytest.approx(0.7890625, abs=1e-12)
    assert lm.prob("a", ("a",)) == pytest.approx(0.1640625, abs=1e-12)


def test_lm_conditional_sums_to_one():
    lm = train_quality_lm(["a b a b c a"], order=3)
    for ctx in [(), ("a",), ("a", "b"), ("zz",)]:
        total = sum(lm.prob(w, ctx) for w in lm.vocab)
        assert total == pytest.approx(1.0, abs=1e-9)


def test_lm_order_one_rejected():
    with pytest.raises(ValueError):
        train_quality_lm(["a b"], order=1)


def test_lm_empty_corpus_rejected():
    with pytest.raises(ValueError):
        train_quality_lm([], order=2)
    with pytest.raises(ValueError):
        train_quality_lm(["", "  "], order=2)


def test_perplexity_single_token_is_inverse_prob():
    lm = train_quality_lm(["a b a b"], order=2)
    assert perplexity(lm, "a") == pytest.approx(1.0 / 0.4375, rel=1e-12)


def test_perplexity_empty_text_errors():
    lm = train_quality_lm(["a b"], order=2)
    with pytest.raises(ValueError):
        perplexity(lm, "")


def test_perplexity_above_one():
    lm = train_quality_lm(["the cat sat on the mat", "the dog sat"], order=2)
    for text in ["the cat", "dog mat the", "unknown words entirely"]:
        assert perplexity(lm, text) > 1.0


def test_training_text_lower_perplexity_than_reversed():
    corpus = ["the cat sat on the mat and the dog slept by the door"]
    lm = train_quality_lm(corpus, order=3)
    forward = perplexity(lm, corpus[0])
    reversed_text = " ".join(reversed(corpus[0].split()))
    assert forward < perplexity(lm, reversed_text)


def test_perplexity_matches_chain_rule_oracle():
    lm = train_quality_lm(
        ["the cat sat on the mat", "a dog sat on a log", "the dog and the cat"],
        order=3,
    )
    fixtures = [
        "the cat sat on a log",
        "a dog and the mat",
        "the " * 25 + "cat",
        "completely unseen tokens here",
    ]
    for text in fixtures:
        tokens = text.split()
        assert len(tokens) <= 50
        assert perplexity(lm, text) == pytest.approx(
            chain_rule_perplexity(lm, tokens), rel=1e-9
        )


def test_lm_save_load(tmp_path):
    lm = train_quality_lm(["the cat sat on the mat"], order=2)
    path = tmp_path / "lm.json"
    lm.save(path)
    loaded = NGramLM.load(path)
    assert perplexity(loaded, "the cat") == perplexity(lm, "the cat")


def test_perplexity_threshold_percentile():
    lm = train_quality_lm(["a b c d e f g h"], order=2)
    held_out = ["a b c", "c d e", "x y z", "a b", "g h"]
    cut = perplexity_threshold(lm, held_out, percentile=90.0)
    ppls = [perplexity(lm, t) for t in held_out]
    assert min(ppls) <= cut <= max(ppls)


# -- quality classifier -------------------------------------------------------

POSITIVES = [
    "the museum exhibition traces the development of early printing techniques",
    "researchers measured rainfall across the northern watershed for a decade",
    "the committee published its annual review of municipal infrastructure",
    "her translation of the novel preserves the cadence of the original prose",
]
NEGATIVES = [
    "click here buy now cheap deals best price click here buy now",
    "win win win free prize claim your free prize now now now",
    "cheap watches cheap bags discount discount discount buy buy",
    "free followers free likes subscribe subscribe smash subscribe",
]


def test_separable_fixture_perfect_training_accuracy():
    clf = train_quality_classifier(POSITIVES, NEGATIVES, hash_dim=1 << 12,
                                   epochs=20, lr=1.0, seed=0)
    for text in POSITIVES:
        assert quality_score(clf, _doc(text)) > 0.5
    for text in NEGATIVES:
        assert quality_score(clf, _doc(text)) < 0.5


def test_identical_classes_score_near_half():
    same = ["identical document text used for both classes"] * 3
    clf = train_quality_classifier(same, same, hash_dim=1 << 12, epochs=10, seed=0)
    score = quality_score(clf, _doc(same[0]))
    assert score == pytest.approx(0.5, abs=0.05)


def test_seed_changes_weights_not_separability():
    a = train_quality_classifier(POSITIVES, NEGATIVES, hash_dim=1 << 12, epochs=20,
                                 lr=1.0, seed=1)
    b = train_quality_classifier(POSITIVES, NEGATIVES, hash_dim=1 << 12, epochs=20,
                                 lr=1.0, seed=2)
    for text in POSITIVES:
        assert quality_score(a, _doc(text)) > 0.5
        assert quality_score(b, _doc(text)) > 0.5
    for text in NEGATIVES:
        assert quality_score(a, _doc(text)) < 0.5
        assert quality_score(b, _doc(text)) < 0.5


def test_empty_doc_scores_bias_only():
    clf = train_quality_classifier(POSITIVES, NEGATIVES, hash_dim=1 << 12, seed=0)
    expected = 1.0 / (1.0 + math.exp(-clf.bias))
    assert quality_score(clf, _doc("")) == pytest.approx(expected)


def test_score_invariant_to_duplication():
    clf = train_quality_classifier(POSITIVES, NEGATIVES, hash_dim=1 << 12, seed=0)
    doc = _doc(POSITIVES[0] + "\n" + NEGATIVES[0])
    doubled = doc.with_text(doc.text + "\n" + doc.text)
    assert quality_score(clf, doubled) == quality_score(clf, doc)


def test_training_loss_non_increasing():
    clf = train_quality_classifier(POSITIVES, NEGATIVES, hash_dim=1 << 12,
                                   epochs=15, lr=0.5, seed=0)
    losses = clf.training_losses
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_empty_class_rejected():
    with pytest.raises(ValueError):
        train_quality_classifier([], NEGATIVES)
    with pytest.raises(ValueError):
        train_quality_classifier(POSITIVES, [])


def test_classifier_save_load(tmp_path):
    clf = train_quality_classifier(POSITIVES, NEGATIVES, hash_dim=1 << 12, seed=0)
    path = tmp_path / "clf.npz"
    clf.save(path)
    loaded = QualityClassifier.load(path)
    doc = _doc(POSITIVES[0])
    assert quality_score(loaded, doc) == pytest.approx(quality_score(clf, doc))
