import json
import math
from fractions import Fraction
from pathlib import Path

import pytest
import torch
from hypothesis import given, settings, strategies as st

import stylestory.metrics as metrics
from stylestory.annotator import AnnotatedStory, StyleAnnotator, StyleStats
from stylestory.corpus import Story, StyleToken, Vocabulary
from stylestory.errors import ConfigError, EmptyCandidate, MissingPair, NoNgrams
from stylestory.keywords import EmotionLexicon, KeywordExtractor, KeywordSet, LexiconTagger, bundled_stopwords
from stylestory.metrics import (SSC_CLASSES, SscConfig, best_of_styles_mean, bleu_best_of_styles, bleu_n,
                                classification_report, distinct_n, label_fractions, lsc, number_metric,
                                per_token_ppl, ppl_best_of_styles, ssc, ssc_from_probs, train_ssc_classifier)
from stylestory.model import ModelConfig, StyleGuidedStoryModel
from stylestory.trainer import Example

FIX = json.loads((Path(__file__).parent / "data" / "metric_fixtures.json").read_text(encoding="utf-8"))


def expect(value, expected):
    """Rationals (strings) must match exactly, floats within 1e-9."""
    if isinstance(expected, str):
        assert Fraction(value).limit_denominator(10**6) == Fraction(expected)
        assert abs(value - float(Fraction(expected))) <= 1e-15
    else:
        assert abs(value - expected) <= 1e-9


@pytest.mark.parametrize("case", FIX["bleu"], ids=lambda c: c["candidate"])
def test_bleu_fixtures(case):
    c, r = case["candidate"].split(), case["reference"].split()
    if not c:
        return
    expect(bleu_n(c, r, 1), case["b1"])
    if "b2_squared" in case:
        expect(bleu_n(c, r, 2) ** 2, case["b2_squared"])
    else:
        expect(bleu_n(c, r, 2), case["b2"])


def test_bleu_errors():
    with pytest.raises(EmptyCandidate):
        bleu_n([], ["a"], 1)
    with pytest.raises(ValueError):
        bleu_n(["a"], ["a"], 0)


@given(st.lists(st.sampled_from("abcdef"), min_size=1, max_size=12), st.integers(1, 4))
def test_bleu_self_is_one(c, n):
    assert bleu_n(c, c, n) == pytest.approx(1.0, abs=1e-12)


def test_bleu_best_of_styles_fixture():
    f = FIX["bleu_best_of_styles"]
    pairs = [(a.split(), b.split()) for a, b in f["pairs"]]
    b1, b2 = bleu_best_of_styles(pairs, [r.split() for r in f["references"]])
    expect(b1, f["b1"])
    expect(b2, f["b2"])


def test_bleu_best_of_styles_missing():
    with pytest.raises(MissingPair):
        bleu_best_of_styles([(["a"], None)], [["a"]])
    with pytest.raises(MissingPair):
        bleu_best_of_styles([], [["a"]])


def test_bleu_empty_generation_scores_zero():
    b1, _ = bleu_best_of_styles([([], [])], [["a"]])
    assert b1 == 0.0


@pytest.mark.parametrize("case", FIX["distinct"], ids=lambda c: "|".join(c["stories"]))
def test_distinct_fixtures(case):
    stories = [s.split() for s in case["stories"]]
    expect(distinct_n(stories, 1), case["d1"])
    expect(distinct_n(stories, 2), case["d2"])


def test_distinct_no_ngrams():
    with pytest.raises(NoNgrams):
        distinct_n([["a"]], 2)


@given(st.lists(st.lists(st.sampled_from("abcd"), min_size=2, max_size=6), min_size=1, max_size=6), st.randoms())
def test_distinct_order_invariant(stories, rnd):
    shuffled = list(stories)
    rnd.shuffle(shuffled)
    assert distinct_n(stories, 2) == distinct_n(shuffled, 2)
    assert 0 < distinct_n(stories, 1) <= 1


def _style_annotator():
    f = FIX["style"]
    lex = EmotionLexicon(f["lexicon"])
    return StyleAnnotator(KeywordExtractor(lex, LexiconTagger.bundled(), bundled_stopwords()),
                          StyleStats.from_json(f["stats"]))


def test_style_metric_fixtures():
    f = FIX["style"]
    ann = _style_annotator()
    stories = [s.split() for s in f["stories"]]
    assert [ann.label_tokens(s).value for s in stories] == f["labels"]
    expect(lsc(stories, StyleToken.EMO, ann), f["lsc_emo"])
    expect(lsc(stories, StyleToken.EVE, ann), f["lsc_eve"])
    expect(number_metric(stories, StyleToken.EMO, ann), f["number_emo"])
    expect(number_metric(stories, StyleToken.EVE, ann), f["number_eve"])


WORDS = ["glad", "sad", "jumped", "kicked", "the", "table"]


@given(st.lists(st.lists(st.sampled_from(WORDS), max_size=6), min_size=1, max_size=8))
def test_lsc_partition_and_number_monotone(stories):
    ann = _style_annotator()
    fr = label_fractions(stories, ann)
    total = lsc(stories, StyleToken.EMO, ann) + lsc(stories, StyleToken.EVE, ann) + fr[StyleToken.OTHER]
    # the three counts partition the stories; float division can only cost the last bit
    assert abs(total - 1.0) <= 1e-15
    for m in (lsc(stories, StyleToken.EMO, ann), number_metric(stories, StyleToken.EVE, ann)):
        assert 0 <= m <= 1
    base = number_metric(stories, StyleToken.EMO, ann)
    grown = [s + ["glad"] if i == 0 else s for i, s in enumerate(stories)]
    assert number_metric(grown, StyleToken.EMO, ann) >= base


def test_lsc_partition_exact_counts():
    ann = _style_annotator()
    stories = [s.split() for s in FIX["style"]["stories"]] * 3
    counts = [sum(ann.label_tokens(s) is t for s in stories) for t in StyleToken]
    assert sum(counts) == len(stories)


# ---------------------------------------------------------------- perplexity

def _flat_model(V=12, bias=None):
    torch.manual_seed(0)
    m = StyleGuidedStoryModel(ModelConfig(vocab_size=V, d_model=8, n_heads=2, d_r=4, d_ff=16,
                                          n_layers_enc=1, n_layers_dec=1))
    with torch.no_grad():
        for lin in (m.output_head, m.keyword_head, m.gate):
            lin.weight.zero_()
            lin.bias.zero_()
        if bias is not None:
            m.output_head.bias.copy_(torch.tensor(bias, dtype=torch.float64))
    m.eval()
    return m


def test_ppl_uniform_model_equals_vocab_size():
    m = _flat_model(V=12)
    ex = [Example("a", 4, (10,), (11, 10, 3), ())]
    assert per_token_ppl(m, ex)[0] == pytest.approx(12.0, abs=1e-9)
    assert ppl_best_of_styles(m, Vocabulary(["x", "y"]), ex) == pytest.approx(12.0, abs=1e-9)


def test_ppl_hand_computed_mixture():
    # p_l = softmax(bias), p_k uniform, g = 1/2 everywhere -> p = p_l / 2 + 1 / (2V)
    V = 12
    bias = [0.0] * V
    bias[10] = math.log(5.0)
    m = _flat_model(V, bias)
    z = (V - 1) + 5.0
    p = lambda i: 0.5 * (5.0 if i == 10 else 1.0) / z + 0.5 / V  # noqa: E731
    gold = (10, 11, 3)
    expected = math.exp(-sum(math.log(p(i)) for i in gold) / len(gold))
    assert per_token_ppl(m, [Example("a", 5, (10,), gold, ())])[0] == pytest.approx(expected, abs=1e-9)


def test_ppl_takes_per_sample_minimum(monkeypatch):
    table = {4: [2.0, 5.0], 5: [3.0, 4.0]}  # <emo> id 4, <eve> id 5
    monkeypatch.setattr(metrics, "per_token_ppl", lambda model, exs: table[exs[0].style_id])
    exs = [Example("a", 6, (), (3,), ()), Example("b", 6, (), (3,), ())]
    assert ppl_best_of_styles(None, Vocabulary(), exs) == 3.0


def test_ppl_min_dominance_on_trained_like_model():
    torch.manual_seed(3)
    m = StyleGuidedStoryModel(ModelConfig(vocab_size=14, d_model=8, n_heads=2, d_r=4, d_ff=16,
                                          n_layers_enc=1, n_layers_dec=1))
    with torch.no_grad():
        for p in m.parameters():
            p.normal_(0, 0.4)
    v = Vocabulary(["a", "b", "c", "d"])
    exs = [Example(str(i), 4, (10 + i % 4,), (11, 12 + i % 2, 3), ()) for i in range(6)]
    best = ppl_best_of_styles(m, v, exs)
    for style in (StyleToken.EMO, StyleToken.EVE):
        restyled = [Example(e.id, v.style_id(style), e.leading, e.target, ()) for e in exs]
        assert best <= sum(per_token_ppl(m, restyled)) / len(exs) + 1e-12
    assert best >= 1.0


def test_best_of_styles_mean():
    assert best_of_styles_mean([[1, 3], [4, 2]], min) == 1.5
    assert best_of_styles_mean([[1, 3], [4, 2]], max) == 3.5
    with pytest.raises(ValueError):
        best_of_styles_mean([])


# ---------------------------------------------------------------- SSC-lite

def test_ssc_from_probs_examples():
    assert ssc_from_probs([[1, 0, 0]] * 3, StyleToken.EMO) == 1.0
    assert ssc_from_probs([[1 / 3] * 3] * 2, StyleToken.EVE) == pytest.approx(1 / 3)
    assert ssc_from_probs([[0.2, 0.5, 0.3], [0.6, 0.1, 0.3]], StyleToken.EMO) == pytest.approx(0.4)


def test_classification_report_majority_and_f1():
    rep = classification_report([0, 0, 1, 2], [0, 1, 1, 2])
    assert rep.accuracy == 0.75 and rep.majority_baseline == 0.5
    assert rep.f1 == {"emo": pytest.approx(2 / 3), "eve": pytest.approx(2 / 3), "other": 1.0}


def _separable_corpus(n, offset=0):
    words = {StyleToken.EMO: "glad happy joyful", StyleToken.EVE: "jumped kicked pushed",
             StyleToken.OTHER: "table chair lamp"}
    out = []
    for i in range(n):
        label = SSC_CLASSES[i % 3]
        story = Story(f"s{i + offset}", ("Lead.", f"{words[label]} {words[label].split()[i % 3]}."))
        out.append(AnnotatedStory(story, label, KeywordSet(), (), 0.5, 0.5, "train"))
    return out


def test_ssc_classifier_separable():
    train_set, held = _separable_corpus(90), _separable_corpus(30, offset=1000)
    vocab = Vocabulary(["glad", "happy", "joyful", "jumped", "kicked", "pushed", "table", "chair", "lamp", "."])
    clf, rep = train_ssc_classifier(train_set, vocab, SscConfig(d_model=16, n_heads=2, d_ff=32, epochs=15), held)
    assert rep.accuracy >= 0.95
    assert rep.majority_baseline == pytest.approx(1 / 3)
    probs = clf.predict_proba([vocab.encode(a.story.continuation_tokens()) for a in held] + [[]])
    assert torch.allclose(probs.sum(-1), torch.ones(len(held) + 1, dtype=probs.dtype), atol=1e-6)
    emo_only = [vocab.encode(a.story.continuation_tokens()) for a in held if a.label is StyleToken.EMO]
    assert ssc(clf, emo_only, StyleToken.EMO) > 0.8


def test_ssc_classifier_config_errors():
    with pytest.raises(ConfigError):
        SscConfig(d_model=10, n_heads=4)
    with pytest.raises(ConfigError):
        train_ssc_classifier([], Vocabulary())
