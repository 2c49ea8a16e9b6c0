"""Teacher-forced training with L = L_st + alpha * L_k, plus a finite-difference gradient checker."""
from __future__ import annotations

import logging
import math
import random
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import torch
from torch import Tensor

from .annotator import AnnotatedStory
from .corpus import RESERVED_TOKENS, StyleToken, Vocabulary
from .errors import ConfigError, NonFiniteLoss
from .model import DTYPE, ModelConfig, StyleGuidedStoryModel, save_checkpoint

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.2
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    optimizer: str = "adamw"
    weight_decay: float = 0.01
    grad_clip: float | None = None

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.optimizer not in ("adamw", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ConfigError("grad_clip must be positive when set")


@dataclass(frozen=True)
class Example:
    id: str
    style_id: int
    leading: tuple[int, ...]
    target: tuple[int, ...]    # continuation ids followed by <eos>
    keywords: tuple[int, ...]  # unique planning-keyword ids, first-occurrence order


def make_example(story_id: str, style: StyleToken, leading: Sequence[str], continuation: Sequence[str],
                 planning_keywords: Sequence[str], vocab: Vocabulary, max_len: int) -> Example:
    """Encode one story; leading and continuation are cut to ``max_len - 1`` tokens."""
    lead = vocab.encode(leading[: max_len - 1])
    target = vocab.encode(continuation[: max_len - 1]) + [vocab.eos_id]
    kws = [i for i in dict.fromkeys(vocab.encode(planning_keywords)) if i >= len(RESERVED_TOKENS)]
    return Example(story_id, vocab.style_id(style), tuple(lead), tuple(target), tuple(kws))


def examples_from_annotated(stories: Iterable[AnnotatedStory], vocab: Vocabulary, max_len: int) -> list[Example]:
    return [
        make_example(a.story.id, a.label, a.story.leading_tokens(), a.story.continuation_tokens(),
                     a.planning_keywords, vocab, max_len)
        for a in stories
    ]


@dataclass
class Batch:
    src: Tensor        # [B,S] style id then leading ids
    src_mask: Tensor   # [B,S] bool
    tgt_in: Tensor     # [B,T] <bos> + target[:-1]
    tgt_out: Tensor    # [B,T]
    tgt_mask: Tensor   # [B,T] bool
    kw_target: Tensor  # [B,V] uniform over keyword ids, zero rows when absent
    has_kw: Tensor     # [B] bool

    def __len__(self) -> int:
        return self.src.shape[0]


def collate(examples: Sequence[Example], vocab_size: int, pad_id: int = 0, bos_id: int = 2) -> Batch:
    B = len(examples)
    S = max(1 + len(e.leading) for e in examples)
    T = max(len(e.target) for e in examples)
    src = torch.full((B, S), pad_id, dtype=torch.long)
    tgt_in = torch.full((B, T), pad_id, dtype=torch.long)
    tgt_out = torch.full((B, T), pad_id, dtype=torch.long)
    kw = torch.zeros(B, vocab_size, dtype=DTYPE)
    for b, e in enumerate(examples):
        src[b, : 1 + len(e.leading)] = torch.tensor([e.style_id, *e.leading])
        tgt_in[b, : len(e.target)] = torch.tensor([bos_id, *e.target[:-1]])
        tgt_out[b, : len(e.target)] = torch.tensor(e.target)
        if e.keywords:
            kw[b, list(e.keywords)] = 1.0 / len(e.keywords)
    src_mask = torch.zeros(B, S, dtype=torch.bool)
    tgt_mask = torch.zeros(B, T, dtype=torch.bool)
    for b, e in enumerate(examples):
        src_mask[b, : 1 + len(e.leading)] = True
        tgt_mask[b, : len(e.target)] = True
    has_kw = torch.tensor([bool(e.keywords) for e in examples])
    return Batch(src, src_mask, tgt_in, tgt_out, tgt_mask, kw, has_kw)


def loss_terms(model: StyleGuidedStoryModel, batch: Batch, gate_override: float | None = None):
    """Per-example story NLL [B] and keyword cross-entropy [B] (zero where skipped)."""
    plan_logits, _, dec = model(batch.src, batch.src_mask, batch.tgt_in, gate_override)
    tok_nll = -dec.log_p.gather(-1, batch.tgt_out.unsqueeze(-1)).squeeze(-1)
    l_st = (tok_nll * batch.tgt_mask.to(DTYPE)).sum(dim=-1)
    log_p_k = torch.log_softmax(plan_logits, dim=-1)
    l_k = -(batch.kw_target * log_p_k).sum(dim=-1)
    return l_st, l_k


def example_loss(model: StyleGuidedStoryModel, batch: Batch, alpha: float, gate_override: float | None = None) -> Tensor:
    l_st, l_k = loss_terms(model, batch, gate_override)
    return (l_st + alpha * l_k).mean()


@dataclass
class EpochStats:
    epoch: int
    l_st: float
    l_k: float
    loss: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    initial: EpochStats | None = None
    wall_clock_s: float = 0.0
    checkpoint: str | None = None

    def to_json(self) -> dict:
        # wall-clock is deliberately left out so reruns serialize identically
        return {
            "initial": asdict(self.initial) if self.initial else None,
            "epochs": [asdict(e) for e in self.epochs],
            "checkpoint": self.checkpoint,
        }


def seed_everything(seed: int) -> None:
    random.seed(seed)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def _make_optimizer(model, cfg: TrainConfig):
    if cfg.optimizer == "adamw":
        return torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    return torch.optim.SGD(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)


@torch.no_grad()
def evaluate_losses(model: StyleGuidedStoryModel, examples: Sequence[Example], alpha: float,
                    batch_size: int = 64, epoch: int = 0) -> EpochStats:
    sum_st = sum_k = sum_total = 0.0
    for i in range(0, len(examples), batch_size):
        batch = collate(examples[i:i + batch_size], model.cfg.vocab_size)
        l_st, l_k = loss_terms(model, batch)
        sum_st += float(l_st.sum())
        sum_k += float(l_k.sum())
        sum_total += float((l_st + alpha * l_k).sum())
    n = max(len(examples), 1)
    return EpochStats(epoch, sum_st / n, sum_k / n, sum_total / n)


def train(examples: Sequence[Example], model_cfg: ModelConfig, cfg: TrainConfig,
          run_dir: str | Path | None = None, vocab: Vocabulary | None = None,
          save_every: int = 0) -> tuple[StyleGuidedStoryModel, TrainReport]:
    """Train from scratch. Epoch losses are means over examples; a skipped keyword term counts as 0,
    so ``loss == l_st + alpha * l_k`` holds for every reported row."""
    if not examples:
        raise ConfigError("no training examples")
    if run_dir is not None and vocab is None:
        raise ConfigError("saving checkpoints needs the vocabulary")
    seed_everything(cfg.seed)
    model = StyleGuidedStoryModel(model_cfg)
    optimizer = _make_optimizer(model, cfg)
    order_rng = random.Random(cfg.seed)
    report = TrainReport()
    model.eval()
    report.initial = evaluate_losses(model, examples, cfg.alpha, epoch=0)
    start = time.perf_counter()
    order = list(range(len(examples)))
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order_rng.shuffle(order)
        sum_st = sum_k = sum_total = 0.0
        for i in range(0, len(order), cfg.batch_size):
            batch = collate([examples[j] for j in order[i:i + cfg.batch_size]], model_cfg.vocab_size)
            l_st, l_k = loss_terms(model, batch)
            per_example = l_st + cfg.alpha * l_k
            loss = per_example.mean()
            if not torch.isfinite(loss):
                raise NonFiniteLoss(
                    f"epoch {epoch}, batch {i // cfg.batch_size}: loss={float(loss.detach())} "
                    f"l_st={l_st.detach().tolist()} l_k={l_k.detach().tolist()}"
                )
            optimizer.zero_grad()
            loss.backward()
            if cfg.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()
            sum_st += float(l_st.detach().sum())
            sum_k += float(l_k.detach().sum())
            sum_total += float(per_example.detach().sum())
        n = len(examples)
        stats = EpochStats(epoch, sum_st / n, sum_k / n, sum_total / n)
        report.epochs.append(stats)
        log.info("epoch %d  L=%.4f  L_st=%.4f  L_k=%.4f", epoch, stats.loss, stats.l_st, stats.l_k)
        if run_dir is not None and save_every and epoch % save_every == 0 and epoch != cfg.epochs:
            save_checkpoint(model, checkpoint_path(run_dir, epoch), vocab, {"train": asdict(cfg)})
    report.wall_clock_s = time.perf_counter() - start
    model.eval()
    if run_dir is not None:
        path = checkpoint_path(run_dir, cfg.epochs)
        save_checkpoint(model, path, vocab, {"train": asdict(cfg)})
        report.checkpoint = path.name
    return model, report


def checkpoint_path(run_dir: str | Path, epoch: int) -> Path:
    return Path(run_dir) / f"epoch-{epoch}.ckpt"


# ---------------------------------------------------------------- gradient check

@dataclass
class GradCheckResult:
    max_rel_error: float
    n_coords: int
    per_group: dict[str, float]
    worst: tuple[str, tuple[int, ...], float, float] | None = None

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error <= tol


def _pick_coords(model: StyleGuidedStoryModel, example: Example, n_coords: int, rng: random.Random):
    embed_rows = sorted({example.style_id, *example.leading, *example.target, 2})
    pos_rows = {
        "enc_pos.weight": list(range(1 + len(example.leading))),
        "dec_pos.weight": list(range(len(example.target))),
        "embed.weight": embed_rows,
    }
    params = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    per_tensor = max(1, math.ceil(n_coords / len(params)))
    coords = []
    for name, p in params:
        for _ in range(per_tensor):
            if name in pos_rows:
                idx = (rng.choice(pos_rows[name]), rng.randrange(p.shape[1]))
            else:
                idx = tuple(rng.randrange(s) for s in p.shape)
            coords.append((name, idx))
    return coords


def grad_check(model: StyleGuidedStoryModel, example: Example, epsilon: float = 1e-5, alpha: float = 0.2,
               n_coords: int = 240, seed: int = 0,
               grad_hook: Callable[[str, Tensor], Tensor] | None = None,
               gate_override: float | None = None, rel_floor: float = 1e-6) -> GradCheckResult:
    """Compare backprop gradients of the total loss with central differences.

    Every parameter tensor contributes at least one coordinate. ``grad_hook(name, grad)`` may
    rewrite an analytic gradient before comparison (used to prove that the check can fail).
    The relative error is |a - n| / max(|a|, |n|, floor) with floor = ``rel_floor * max(1, |L|)``:
    central differences carry roughly 1e-16 * |L| / epsilon of roundoff, so gradients far below
    the loss scale are compared absolutely.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    batch = collate([example], model.cfg.vocab_size)
    params = dict(model.named_parameters())
    was_training = model.training
    model.eval()
    model.zero_grad()
    loss = example_loss(model, batch, alpha, gate_override)
    loss.backward()
    floor = rel_floor * max(1.0, abs(float(loss.detach())))
    analytic = {}
    for name, p in params.items():
        g = p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
        analytic[name] = grad_hook(name, g) if grad_hook is not None else g
    model.zero_grad()

    coords = _pick_coords(model, example, n_coords, random.Random(seed))
    per_group: dict[str, float] = {}
    worst = None
    max_err = 0.0
    with torch.no_grad():
        for name, idx in coords:
            p = params[name]
            orig = float(p[idx])
            p[idx] = orig + epsilon
            f_plus = float(example_loss(model, batch, alpha, gate_override))
            p[idx] = orig - epsilon
            f_minus = float(example_loss(model, batch, alpha, gate_override))
            p[idx] = orig
            numeric = (f_plus - f_minus) / (2 * epsilon)
            a = float(analytic[name][idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            per_group[name] = max(per_group.get(name, 0.0), err)
            if err >= max_err:
                max_err, worst = err, (name, idx, a, numeric)
    model.train(was_training)
    return GradCheckResult(max_err, len(coords), per_group, worst)
