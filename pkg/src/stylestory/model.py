"""Encoder-decoder with a bag-of-words keyword planner fused into decoding through a per-token gate.

Shapes use B = batch, S = source length (style token + leading sentence),
T = target length, V = vocabulary size, D = d_model, R = d_r.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from .corpus import RESERVED_TOKENS, Vocabulary
from .errors import EmptyTarget, FormatError, IdOutOfRange, LengthExceeded

DTYPE = torch.float64
CHECKPOINT_FORMAT = "stylestory-checkpoint"
CHECKPOINT_VERSION = 1
_TINY = 1e-300


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 128
    n_layers_enc: int = 2
    n_layers_dec: int = 2
    n_heads: int = 4
    d_r: int = 64
    d_ff: int = 256
    max_len: int = 128

    def __post_init__(self) -> None:
        for name in ("vocab_size", "d_model", "n_layers_enc", "n_layers_dec", "n_heads", "d_r", "d_ff", "max_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.max_len < 120:
            raise ValueError("max_len must be at least 120")


# ---------------------------------------------------------------- distributions and losses

def stable_softmax(logits: Tensor, dim: int = -1) -> Tensor:
    shifted = logits - logits.max(dim=dim, keepdim=True).values
    e = shifted.exp()
    return e / e.sum(dim=dim, keepdim=True)


def fuse(p_l: Tensor, p_k: Tensor, g: Tensor) -> tuple[Tensor, Tensor]:
    """Gated per-token mixture. Returns (unnormalized, renormalized)."""
    p_tilde = p_l * (1.0 - g) + p_k * g
    return p_tilde, p_tilde / p_tilde.sum(dim=-1, keepdim=True)


def keyword_loss(p_k: Tensor, targets: Sequence[int]) -> Tensor:
    """Cross-entropy against a uniform distribution over the unique target ids."""
    ids = sorted(set(int(t) for t in targets))
    if not ids:
        raise EmptyTarget("no planning keywords; skip the keyword term")
    idx = torch.tensor(ids, dtype=torch.long)
    return -p_k[..., idx].clamp_min(_TINY).log().mean(dim=-1)


def story_loss(p_steps: Tensor, gold: Sequence[int] | Tensor, mask: Tensor | None = None) -> Tensor:
    """Sum over positions of -log p_t[gold_t]; positions with mask == 0 are excluded."""
    gold = torch.as_tensor(gold, dtype=torch.long)
    nll = -p_steps.gather(-1, gold.unsqueeze(-1)).squeeze(-1).clamp_min(_TINY).log()
    if mask is not None:
        nll = nll * mask.to(nll.dtype)
    return nll.sum(dim=-1)


def total_loss(l_st, l_k, alpha: float):
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    if l_k is None:
        return l_st
    return l_st + alpha * l_k


# ---------------------------------------------------------------- transformer blocks

class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model, bias=False)  # a key bias only shifts scores uniformly
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)

    def forward(self, x: Tensor, memory: Tensor, mask: Tensor) -> Tensor:
        # x [B,Tq,D], memory [B,Tk,D], mask [B,Tq,Tk] bool (True = may attend)
        B, Tq, D = x.shape
        Tk = memory.shape[1]
        q = self.q_proj(x).view(B, Tq, self.n_heads, self.d_head).transpose(1, 2)
        k = self.k_proj(memory).view(B, Tk, self.n_heads, self.d_head).transpose(1, 2)
        v = self.v_proj(memory).view(B, Tk, self.n_heads, self.d_head).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        scores = scores.masked_fill(~mask.unsqueeze(1), torch.finfo(scores.dtype).min)
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, Tq, D)
        return self.out_proj(out)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ff: int):
        super().__init__()
        self.fc1 = nn.Linear(d_model, d_ff)
        self.fc2 = nn.Linear(d_ff, d_model)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff)

    def forward(self, x: Tensor, mask: Tensor) -> Tensor:
        h = self.norm1(x)
        x = x + self.self_attn(h, h, mask)
        return x + self.ff(self.norm2(x))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.norm3 = nn.LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff)

    def forward(self, y: Tensor, memory: Tensor, self_mask: Tensor, cross_mask: Tensor) -> Tensor:
        h = self.norm1(y)
        y = y + self.self_attn(h, h, self_mask)
        y = y + self.cross_attn(self.norm2(y), memory, cross_mask)
        return y + self.ff(self.norm3(y))


# ---------------------------------------------------------------- containers

@dataclass
class EncoderOutput:
    states: Tensor  # [n+1, D]; row 0 sits at the style token

    @property
    def h0(self) -> Tensor:
        return self.states[0]


@dataclass
class PlanDistribution:
    p_k: Tensor  # [V]


@dataclass
class StepOutput:
    s_t: Tensor
    p_l: Tensor
    g_t: Tensor
    p_tilde: Tensor
    p: Tensor


@dataclass
class DecodeOutput:
    s: Tensor        # [B,T,D]
    p_l: Tensor      # [B,T,V]
    g: Tensor        # [B,T,V]
    p_tilde: Tensor  # [B,T,V]
    log_p: Tensor    # [B,T,V], log of the renormalized fused distribution


# ---------------------------------------------------------------- model

class StyleGuidedStoryModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        V, D = cfg.vocab_size, cfg.d_model
        self.embed = nn.Embedding(V, D)
        self.enc_pos = nn.Embedding(cfg.max_len, D)
        self.dec_pos = nn.Embedding(cfg.max_len, D)
        self.encoder_layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.n_layers_enc))
        self.enc_norm = nn.LayerNorm(D)
        self.decoder_layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.n_layers_dec))
        self.dec_norm = nn.LayerNorm(D)
        self.keyword_head = nn.Linear(D, V)              # W_k, b_k
        self.output_head = nn.Linear(D, V)               # W_s, b_s
        self.keyword_proj = nn.Linear(V, cfg.d_r)        # W_r, b_r
        self.gate = nn.Linear(cfg.d_r + D, V)            # W_g, b_g
        for emb in (self.embed, self.enc_pos, self.dec_pos):
            nn.init.normal_(emb.weight, std=0.02)
        self.to(DTYPE)

    # --- batched paths

    def encode_batch(self, src: Tensor, src_mask: Tensor) -> Tensor:
        S = src.shape[1]
        x = self.embed(src) + self.enc_pos(torch.arange(S))
        attn_mask = src_mask.unsqueeze(1).expand(-1, S, -1)
        for layer in self.encoder_layers:
            x = layer(x, attn_mask)
        return self.enc_norm(x)

    def plan_logits(self, h0: Tensor) -> Tensor:
        return self.keyword_head(h0)

    def decode_batch(self, tgt_in: Tensor, memory: Tensor, src_mask: Tensor, p_k: Tensor,
                     gate_override: float | None = None) -> DecodeOutput:
        B, T = tgt_in.shape
        y = self.embed(tgt_in) + self.dec_pos(torch.arange(T))
        causal = torch.ones(T, T, dtype=torch.bool).tril()
        self_mask = causal.unsqueeze(0).expand(B, -1, -1)
        cross_mask = src_mask.unsqueeze(1).expand(-1, T, -1)
        for layer in self.decoder_layers:
            y = layer(y, memory, self_mask, cross_mask)
        s = self.dec_norm(y)
        p_l = stable_softmax(self.output_head(s))
        r = self.keyword_proj(p_k).unsqueeze(1).expand(-1, T, -1)
        if gate_override is None:
            g = torch.sigmoid(self.gate(torch.cat([r, s], dim=-1)))
        else:
            g = torch.full_like(p_l, float(gate_override))
        p_k_t = p_k.unsqueeze(1)
        p_tilde = p_l * (1.0 - g) + p_k_t * g
        log_p = p_tilde.clamp_min(_TINY).log() - p_tilde.sum(dim=-1, keepdim=True).log()
        return DecodeOutput(s, p_l, g, p_tilde, log_p)

    def forward(self, src: Tensor, src_mask: Tensor, tgt_in: Tensor, gate_override: float | None = None):
        memory = self.encode_batch(src, src_mask)
        plan_logits = self.plan_logits(memory[:, 0])
        p_k = stable_softmax(plan_logits)
        dec = self.decode_batch(tgt_in, memory, src_mask, p_k, gate_override)
        return plan_logits, p_k, dec

    # --- single-example API

    def _check_ids(self, ids: Sequence[int]) -> None:
        V = self.cfg.vocab_size
        for i in ids:
            if not 0 <= int(i) < V:
                raise IdOutOfRange(f"token id {i} outside [0, {V})")

    def style_source(self, style_id: int, leading: Sequence[int]) -> Tensor:
        if len(leading) > self.cfg.max_len - 1:
            raise LengthExceeded(f"leading context of {len(leading)} tokens exceeds {self.cfg.max_len - 1}")
        self._check_ids([style_id, *leading])
        return torch.tensor([[style_id, *leading]], dtype=torch.long)

    def encode(self, style_id: int, leading: Sequence[int]) -> EncoderOutput:
        src = self.style_source(style_id, leading)
        return EncoderOutput(self.encode_batch(src, torch.ones_like(src, dtype=torch.bool))[0])

    def plan_distribution(self, h0: Tensor) -> PlanDistribution:
        return PlanDistribution(stable_softmax(self.plan_logits(h0)))

    def decode_step(self, prefix: Sequence[int], enc: EncoderOutput, plan: PlanDistribution,
                    gate_override: float | None = None) -> StepOutput:
        if len(prefix) >= self.cfg.max_len:
            raise LengthExceeded(f"prefix of {len(prefix)} tokens reaches max_len {self.cfg.max_len}")
        self._check_ids(prefix)
        tgt = torch.tensor([list(prefix)], dtype=torch.long)
        memory = enc.states.unsqueeze(0)
        src_mask = torch.ones(1, memory.shape[1], dtype=torch.bool)
        out = self.decode_batch(tgt, memory, src_mask, plan.p_k.unsqueeze(0), gate_override)
        p_tilde = out.p_tilde[0, -1]
        return StepOutput(out.s[0, -1], out.p_l[0, -1], out.g[0, -1], p_tilde, p_tilde / p_tilde.sum())


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(model: StyleGuidedStoryModel, path: str | Path, vocab: Vocabulary, extra: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.cfg),
        "vocab_sha256": vocab.sha256(),
        "vocab": vocab.tokens,
        "state": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> tuple[StyleGuidedStoryModel, Vocabulary, dict]:
    payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT or payload.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    tokens = payload["vocab"]
    vocab = Vocabulary(tokens[len(RESERVED_TOKENS):])
    if vocab.sha256() != payload["vocab_sha256"]:
        raise FormatError(f"{path}: vocabulary hash mismatch")
    model = StyleGuidedStoryModel(ModelConfig(**payload["config"]))
    model.load_state_dict(payload["state"])
    model.eval()
    return model, vocab, payload.get("extra", {})
