"""Temperature-scaled top-k sampling and autoregressive generation.

Random stream: ``numpy.random.Generator`` over PCG64. Each draw consumes exactly
one ``rng.random()`` double, so a seed fixes the whole sequence of draws on
every platform numpy supports.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .corpus import StyleToken, Vocabulary
from .model import StyleGuidedStoryModel


@dataclass(frozen=True)
class SamplerConfig:
    k: int = 50
    temperature: float = 0.8
    max_len: int = 120
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")


def top_k_sample(p: np.ndarray, k: int, temperature: float, rng: np.random.Generator) -> int:
    """Draw one id from ``p`` after temperature scaling (logits = log p / T) and top-k truncation.

    Ties at the k-th rank go to the lower id. Zero-probability ids are never drawn.
    """
    p = np.asarray(p, dtype=np.float64)
    if not 1 <= k:
        raise ValueError("k must be >= 1")
    with np.errstate(divide="ignore"):
        logits = np.log(p) / temperature
    order = np.argsort(-logits, kind="stable")[: min(k, p.size)]
    order = order[np.isfinite(logits[order])]
    if order.size == 0:
        raise ValueError("distribution has no positive mass")
    top = logits[order]
    w = np.exp(top - top[0])
    cdf = np.cumsum(w)
    u = rng.random() * cdf[-1]
    idx = int(np.searchsorted(cdf, u, side="right"))
    return int(order[min(idx, order.size - 1)])


@torch.no_grad()
def generate(model: StyleGuidedStoryModel, vocab: Vocabulary, style: StyleToken, leading: list[int],
             cfg: SamplerConfig, rng: np.random.Generator | None = None,
             gate_override: float | None = None) -> list[int]:
    """Sample a continuation (ids, without <bos>/<eos>) for ``leading`` under ``style``.

    The encoder and plan run once; control ids (<pad>, <bos>, style tokens) are masked out
    of every step distribution before sampling.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    model.eval()
    enc = model.encode(vocab.style_id(style), leading)
    plan = model.plan_distribution(enc.h0)
    banned = np.array(sorted(vocab.control_ids))
    prefix = [vocab.bos_id]
    out: list[int] = []
    max_len = min(cfg.max_len, model.cfg.max_len - 1)
    while len(out) < max_len:
        step = model.decode_step(prefix, enc, plan, gate_override)
        p = step.p.numpy().copy()
        p[banned] = 0.0
        total = p.sum()
        if not total > 0:
            break
        tok = top_k_sample(p / total, cfg.k, cfg.temperature, rng)
        if tok == vocab.eos_id:
            break
        out.append(tok)
        prefix.append(tok)
    return out


def record_rng(seed: int, index: int, style: StyleToken) -> np.random.Generator:
    """Independent stream per (seed, record index, style); rerunning one record needs no others."""
    style_code = {StyleToken.EMO: 0, StyleToken.EVE: 1, StyleToken.OTHER: 2}[style]
    return np.random.default_rng([seed, index, style_code])
