import math
from dataclasses import replace

import pytest
import torch

from stylestory.corpus import StyleToken, Vocabulary
from stylestory.errors import ConfigError, NonFiniteLoss
from stylestory.model import StyleGuidedStoryModel, load_checkpoint
from stylestory.trainer import (Example, TrainConfig, collate, evaluate_losses, example_loss, grad_check,
                                loss_terms, make_example, seed_everything, train)

from helpers import tiny_examples


@pytest.fixture(scope="module")
def data():
    return tiny_examples(60, seed=0)


def test_config_validation():
    for bad in (dict(alpha=-1), dict(batch_size=0), dict(learning_rate=0), dict(optimizer="adam"),
                dict(grad_clip=0.0), dict(epochs=-1)):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)


def test_make_example_encoding():
    v = Vocabulary(["he", "ran", "was", "glad", "."])
    ex = make_example("s", StyleToken.EMO, ["he", "ran"], ["he", "was", "glad", "glad"], ["glad", "glad", "zzz"],
                      v, max_len=120)
    assert ex.style_id == v.style_id(StyleToken.EMO)
    assert ex.target[-1] == v.eos_id and len(ex.target) == 5
    # duplicates collapse and <unk> never becomes a planning target
    assert ex.keywords == (v.token_to_id("glad"),)


def test_make_example_truncates():
    v = Vocabulary(["a"])
    ex = make_example("s", StyleToken.EVE, ["a"] * 200, ["a"] * 200, [], v, max_len=120)
    assert len(ex.leading) == 119 and len(ex.target) == 120


def test_collate_shapes(data):
    examples, mc, _ = data
    b = collate(examples[:3], mc.vocab_size)
    assert len(b) == 3
    assert b.src.shape[0] == 3 and b.tgt_in.shape == b.tgt_out.shape
    assert bool((b.tgt_in[:, 0] == 2).all())


def test_loss_decomposition_and_skip(data):
    examples, mc, _ = data
    torch.manual_seed(0)
    model = StyleGuidedStoryModel(mc)
    batch = collate(examples[:8], mc.vocab_size)
    l_st, l_k = loss_terms(model, batch)
    total = example_loss(model, batch, 0.2)
    assert torch.allclose(total, (l_st + 0.2 * l_k).mean(), atol=1e-12)
    empty = replace(examples[0], keywords=())
    _, lk_empty = loss_terms(model, collate([empty], mc.vocab_size))
    assert float(lk_empty[0].detach()) == 0.0


def test_training_smoke_50_stories():
    examples, mc, _ = tiny_examples(63, seed=1)
    assert len(examples) == 51
    _, report = train(examples, mc, TrainConfig(epochs=30, learning_rate=2e-3, seed=0))
    assert report.epochs[-1].loss < report.initial.loss
    for e in report.epochs:
        assert math.isclose(e.loss, e.l_st + 0.2 * e.l_k, rel_tol=0, abs_tol=1e-9)
    assert [e.epoch for e in report.epochs] == list(range(1, 31))


def test_alpha_zero_reports_l_st(data):
    examples, mc, _ = data
    _, report = train(examples, mc, TrainConfig(alpha=0.0, epochs=2, seed=0))
    for e in report.epochs:
        assert e.loss == e.l_st


def test_same_seed_bit_identical(data):
    examples, mc, _ = data
    m1, r1 = train(examples, mc, TrainConfig(epochs=2, seed=5))
    m2, r2 = train(examples, mc, TrainConfig(epochs=2, seed=5))
    for (k, a), (_, b) in zip(m1.state_dict().items(), m2.state_dict().items()):
        assert torch.equal(a, b), k
    assert r1.to_json() == r2.to_json()
    m3, _ = train(examples, mc, TrainConfig(epochs=2, seed=6))
    assert not torch.equal(m1.gate.weight, m3.gate.weight)


def test_sgd_and_clip_run(data):
    examples, mc, _ = data
    _, report = train(examples[:10], mc, TrainConfig(epochs=1, optimizer="sgd", grad_clip=1.0, learning_rate=0.1))
    assert math.isfinite(report.epochs[-1].loss)


def test_checkpoint_written(tmp_path, data):
    examples, mc, vocab = data
    model, report = train(examples[:10], mc, TrainConfig(epochs=2, seed=0), run_dir=tmp_path, vocab=vocab)
    assert report.checkpoint == "epoch-2.ckpt"
    m2, v2, extra = load_checkpoint(tmp_path / "epoch-2.ckpt")
    assert v2.tokens == vocab.tokens and extra["train"]["epochs"] == 2
    batch = collate(examples[:4], mc.vocab_size)
    with torch.no_grad():
        assert torch.equal(example_loss(model, batch, 0.2), example_loss(m2, batch, 0.2))
    with pytest.raises(ConfigError):
        train(examples[:2], mc, TrainConfig(epochs=1), run_dir=tmp_path)


def test_non_finite_loss_aborts(data, monkeypatch):
    examples, mc, _ = data
    import stylestory.trainer as trainer_mod

    real = trainer_mod.loss_terms

    def poisoned(model, batch, gate_override=None):
        l_st, l_k = real(model, batch, gate_override)
        return l_st * float("nan"), l_k

    monkeypatch.setattr(trainer_mod, "loss_terms", poisoned)
    with pytest.raises(NonFiniteLoss, match="epoch 1, batch 0"):
        train(examples[:4], mc, TrainConfig(epochs=1))


def test_empty_examples_rejected(data):
    _, mc, _ = data
    with pytest.raises(ConfigError):
        train([], mc, TrainConfig())


def _model(mc, seed=0):
    seed_everything(seed)
    return StyleGuidedStoryModel(mc)


def test_grad_check_healthy(data):
    examples, mc, _ = data
    ex = next(e for e in examples if e.keywords)
    res = grad_check(_model(mc), ex, epsilon=1e-5, n_coords=240)
    assert res.n_coords >= 200
    assert res.passed(1e-4), res.worst
    for group in ("keyword_head.weight", "output_head.weight", "gate.weight", "keyword_proj.weight",
                  "embed.weight", "encoder_layers.0.self_attn.q_proj.weight"):
        assert group in res.per_group


def test_grad_check_epsilon_range(data):
    examples, mc, _ = data
    with pytest.raises(ValueError):
        grad_check(_model(mc), examples[0], epsilon=1e-2)


def test_grad_check_catches_corrupted_gate_gradient(data):
    examples, mc, _ = data
    ex = next(e for e in examples if e.keywords)
    hook = lambda name, g: g * 1.5 if name == "gate.weight" else g  # noqa: E731
    res = grad_check(_model(mc), ex, grad_hook=hook)
    assert res.max_rel_error > 1e-2 and not res.passed()
    assert res.worst[0] == "gate.weight"


def test_near_zero_loss_gradients_finite(data):
    _, mc, _ = data
    model = _model(mc)
    with torch.no_grad():
        model.output_head.bias[3] = 60.0   # <eos>
        model.gate.bias.fill_(-60.0)
    ex = Example("z", 4, (10, 11), (3,), ())
    batch = collate([ex], mc.vocab_size)
    loss = example_loss(model, batch, 0.2)
    assert float(loss.detach()) < 1e-12
    loss.backward()
    assert all(torch.isfinite(p.grad).all() for p in model.parameters() if p.grad is not None)


def test_keyword_head_gradient_zero_without_fusion(data):
    examples, mc, _ = data
    ex = next(e for e in examples if e.keywords)
    batch = collate([ex], mc.vocab_size)
    model = _model(mc)
    example_loss(model, batch, alpha=0.0, gate_override=0.0).backward()
    g = model.keyword_head.weight.grad
    assert g is None or torch.count_nonzero(g) == 0
    model.zero_grad()
    example_loss(model, batch, alpha=0.0).backward()
    assert float(model.keyword_head.weight.grad.abs().max()) > 0


def test_evaluate_losses_matches_mean(data):
    examples, mc, _ = data
    model = _model(mc)
    stats = evaluate_losses(model, examples[:10], 0.2, batch_size=3)
    with torch.no_grad():
        l_st, l_k = loss_terms(model, collate(examples[:10], mc.vocab_size))
    assert stats.l_st == pytest.approx(float(l_st.mean()), abs=1e-9)
    assert stats.loss == pytest.approx(stats.l_st + 0.2 * stats.l_k, abs=1e-9)
