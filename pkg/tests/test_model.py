import math

import pytest
import torch
from hypothesis import given, settings, strategies as st

from stylestory.corpus import StyleToken, Vocabulary
from stylestory.errors import EmptyTarget, FormatError, IdOutOfRange, LengthExceeded
from stylestory.model import (DTYPE, ModelConfig, StyleGuidedStoryModel, fuse, keyword_loss, load_checkpoint,
                              save_checkpoint, stable_softmax, story_loss, total_loss)

T = lambda *xs: torch.tensor(xs, dtype=DTYPE)  # noqa: E731


def tiny(V=16, seed=0, **kw):
    torch.manual_seed(seed)
    cfg = ModelConfig(vocab_size=V, d_model=8, n_heads=2, d_r=4, d_ff=16, n_layers_enc=1, n_layers_dec=1, **kw)
    return StyleGuidedStoryModel(cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=10, d_model=10, n_heads=4)
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=10, max_len=64)
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=0)


def test_parameter_shapes():
    m = tiny(V=16)
    assert m.keyword_head.weight.shape == (16, 8) and m.keyword_head.bias.shape == (16,)
    assert m.output_head.weight.shape == (16, 8)
    assert m.keyword_proj.weight.shape == (4, 16) and m.keyword_proj.bias.shape == (4,)
    assert m.gate.weight.shape == (16, 12) and m.gate.bias.shape == (16,)
    assert all(p.dtype == torch.float64 for p in m.parameters())


def test_softmax_examples():
    assert torch.allclose(stable_softmax(torch.zeros(5, dtype=DTYPE)), torch.full((5,), 0.2, dtype=DTYPE))
    p = stable_softmax(T(0.0, math.log(3)))
    assert torch.allclose(p, T(0.25, 0.75), atol=1e-15, rtol=0)


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=12))
def test_softmax_shift_invariance_large_offset(xs):
    x = torch.tensor(xs, dtype=DTYPE)
    a, b = stable_softmax(x), stable_softmax(x + 1e4)
    assert torch.max(torch.abs(a - b)) <= 1e-9
    assert torch.isfinite(b).all() and abs(float(b.sum()) - 1) <= 1e-12


def test_plan_uniform_with_zero_head():
    m = tiny(V=16)
    with torch.no_grad():
        m.keyword_head.weight.zero_()
        m.keyword_head.bias.zero_()
    enc = m.encode(m.cfg.vocab_size - 1, [10, 11])
    p = m.plan_distribution(enc.h0).p_k
    assert torch.allclose(p, torch.full((16,), 1 / 16, dtype=DTYPE), atol=1e-15)


def test_keyword_loss_examples():
    assert float(keyword_loss(T(0, 1, 0, 0), [1])) == 0.0
    assert float(keyword_loss(torch.full((4,), 0.25, dtype=DTYPE), [2])) == pytest.approx(math.log(4), abs=1e-14)
    assert float(keyword_loss(T(0.5, 0.5, 0, 0), [0, 1])) == pytest.approx(math.log(2), abs=1e-14)
    # duplicates collapse: uniform over unique ids
    assert float(keyword_loss(T(0.5, 0.5, 0, 0), [0, 1, 1])) == pytest.approx(math.log(2), abs=1e-14)
    with pytest.raises(EmptyTarget):
        keyword_loss(T(0.5, 0.5), [])


def test_story_loss_examples():
    one_hot = torch.eye(4, dtype=DTYPE)[[1, 3]]
    assert float(story_loss(one_hot, [1, 3])) == 0.0
    uniform = torch.full((2, 8), 1 / 8, dtype=DTYPE)
    assert float(story_loss(uniform, [0, 7])) == pytest.approx(2 * math.log(8), abs=1e-13)
    masked = story_loss(uniform, [0, 7], mask=torch.tensor([1, 0]))
    assert float(masked) == pytest.approx(math.log(8), abs=1e-13)


def test_story_loss_monotone():
    p = torch.full((1, 4), 0.25, dtype=DTYPE)
    q = T(0.2, 0.4, 0.2, 0.2).unsqueeze(0)
    assert story_loss(q, [1]) < story_loss(p, [1])


def test_total_loss_examples():
    assert total_loss(1.0, 2.0, 0.2) == pytest.approx(1.4)
    assert total_loss(1.0, 2.0, 0.0) == 1.0
    assert total_loss(0.0, 0.0, 0.7) == 0.0
    assert total_loss(3.0, None, 0.2) == 3.0
    with pytest.raises(ValueError):
        total_loss(1.0, 1.0, -0.1)


def test_fuse_hand_example():
    p_tilde, p = fuse(T(0.9, 0.1), T(0.2, 0.8), T(0.5, 0.5))
    assert torch.allclose(p_tilde, T(0.55, 0.45), atol=1e-15)
    assert torch.allclose(p, T(0.55, 0.45), atol=1e-15)


def test_fuse_boundaries():
    p_l, p_k = T(0.7, 0.2, 0.1), T(0.1, 0.1, 0.8)
    # renormalizing by a sum that rounds to 1 - 2**-53 is the only difference
    assert torch.allclose(fuse(p_l, p_k, torch.zeros(3, dtype=DTYPE))[1], p_l, atol=1e-15, rtol=0)
    assert torch.allclose(fuse(p_l, p_k, torch.ones(3, dtype=DTYPE))[1], p_k, atol=1e-15, rtol=0)


def test_fuse_renormalizes_when_gate_varies():
    p_tilde, p = fuse(T(0.9, 0.1), T(0.1, 0.9), T(0.0, 1.0))
    assert float(p_tilde.sum()) == pytest.approx(1.8)
    assert torch.allclose(p, T(0.5, 0.5))


def _simplex(n):
    return st.lists(st.floats(1e-3, 1.0), min_size=n, max_size=n).map(
        lambda xs: torch.tensor(xs, dtype=DTYPE) / sum(xs))


@given(_simplex(5), _simplex(5), st.lists(st.floats(1e-6, 1 - 1e-6), min_size=5, max_size=5), st.integers(0, 4))
def test_fuse_interpolation_and_monotonicity(p_l, p_k, g, i):
    g = torch.tensor(g, dtype=DTYPE)
    p_tilde, _ = fuse(p_l, p_k, g)
    lo, hi = torch.minimum(p_l, p_k), torch.maximum(p_l, p_k)
    assert torch.all(p_tilde >= lo - 1e-15) and torch.all(p_tilde <= hi + 1e-15)
    bumped = p_k.clone()
    bumped[i] += 0.1
    assert fuse(p_l, bumped, g)[0][i] >= p_tilde[i]


def test_encode_shapes_and_errors():
    m = tiny(V=16, max_len=120)
    enc = m.encode(4, [10, 11, 12])
    assert enc.states.shape == (4, 8)
    with pytest.raises(LengthExceeded):
        m.encode(4, [10] * 120)
    with pytest.raises(IdOutOfRange):
        m.encode(4, [16])
    with pytest.raises(LengthExceeded):
        m.decode_step([2] * 120, enc, m.plan_distribution(enc.h0))


def test_style_changes_h0():
    m = tiny()
    a = m.encode(4, [10, 11]).h0
    b = m.encode(5, [10, 11]).h0
    assert not torch.allclose(a, b)


def test_encode_decode_bit_identical():
    m = tiny()
    e1, e2 = m.encode(4, [10, 12]), m.encode(4, [10, 12])
    assert torch.equal(e1.states, e2.states)
    plan = m.plan_distribution(e1.h0)
    s1, s2 = m.decode_step([2, 11], e1, plan), m.decode_step([2, 11], e2, plan)
    assert torch.equal(s1.p, s2.p) and torch.equal(s1.g_t, s2.g_t)


def test_step_output_invariants():
    m = tiny()
    with torch.no_grad():
        enc = m.encode(5, [10, 11, 12])
        plan = m.plan_distribution(enc.h0)
        step = m.decode_step([2, 13], enc, plan)
    assert abs(float(step.p_l.sum()) - 1) <= 1e-12 and abs(float(step.p.sum()) - 1) <= 1e-12
    assert torch.all(step.g_t > 0) and torch.all(step.g_t < 1)
    assert step.s_t.shape == (8,)


def test_gate_override_plumbing():
    m = tiny()
    with torch.no_grad():
        enc = m.encode(4, [10])
        plan = m.plan_distribution(enc.h0)
        zero = m.decode_step([2], enc, plan, gate_override=0.0)
        one = m.decode_step([2], enc, plan, gate_override=1.0)
    assert torch.allclose(zero.p, zero.p_l, atol=1e-15)
    assert torch.allclose(one.p, plan.p_k, atol=1e-15)


def test_single_step_matches_batched_path():
    m = tiny()
    with torch.no_grad():
        src = torch.tensor([[4, 10, 11]])
        _, p_k, dec = m(src, torch.ones_like(src, dtype=torch.bool), torch.tensor([[2, 12, 13]]))
        enc = m.encode(4, [10, 11])
        step = m.decode_step([2, 12, 13], enc, m.plan_distribution(enc.h0))
    assert torch.allclose(dec.log_p[0, -1].exp(), step.p, atol=1e-12)


def test_padding_does_not_leak():
    m = tiny()
    with torch.no_grad():
        short = torch.tensor([[4, 10, 0, 0]])
        mask = torch.tensor([[True, True, False, False]])
        _, pk_a, dec_a = m(short, mask, torch.tensor([[2, 12]]))
        _, pk_b, dec_b = m(torch.tensor([[4, 10]]), torch.ones(1, 2, dtype=torch.bool), torch.tensor([[2, 12]]))
    assert torch.allclose(pk_a, pk_b, atol=1e-12)
    assert torch.allclose(dec_a.log_p, dec_b.log_p, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_random_model_distributions(seed):
    m = tiny(seed=seed)
    with torch.no_grad():
        for p in m.parameters():
            p.normal_(0, 0.5)
        src = torch.tensor([[5, 10, 11, 14]])
        _, p_k, dec = m(src, torch.ones_like(src, dtype=torch.bool), torch.tensor([[2, 3, 10]]))
    p = dec.log_p.exp()
    assert torch.all(p_k >= 0) and abs(float(p_k.sum()) - 1) <= 1e-6
    assert torch.all(p >= 0) and torch.all(torch.abs(p.sum(-1) - 1) <= 1e-6)
    assert torch.all(dec.g > 0) and torch.all(dec.g < 1)


def test_checkpoint_roundtrip(tmp_path):
    m = tiny()
    vocab = Vocabulary(["a", "b", "c", "d", "e", "f"])
    save_checkpoint(m, tmp_path / "m.ckpt", vocab, {"note": 1})
    m2, v2, extra = load_checkpoint(tmp_path / "m.ckpt")
    assert v2.tokens == vocab.tokens and extra == {"note": 1}
    for (k, a), (_, b) in zip(m.state_dict().items(), m2.state_dict().items()):
        assert torch.equal(a, b), k
    assert m2.cfg == m.cfg


def test_checkpoint_rejects_tampered_vocab(tmp_path):
    m = tiny()
    save_checkpoint(m, tmp_path / "m.ckpt", Vocabulary(["a", "b", "c", "d", "e", "f"]))
    payload = torch.load(tmp_path / "m.ckpt", weights_only=True)
    payload["vocab"][-1] = "zzz"
    torch.save(payload, tmp_path / "bad.ckpt")
    with pytest.raises(FormatError, match="hash"):
        load_checkpoint(tmp_path / "bad.ckpt")
    torch.save({"format": "other"}, tmp_path / "other.ckpt")
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "other.ckpt")


def test_style_ids_in_reserved_range():
    v = Vocabulary()
    assert [v.style_id(s) for s in StyleToken] == [4, 5, 6]
