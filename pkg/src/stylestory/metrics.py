"""Automatic metrics for stylized generation: PPL, BLEU-n, Distinct-n, Number, LSC and SSC-lite."""
from __future__ import annotations

import math
import random
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import torch
import torch.nn as nn

from .annotator import AnnotatedStory, StyleAnnotator, normalize_count
from .corpus import StyleToken, Vocabulary
from .errors import ConfigError, EmptyCandidate, MissingPair, NoNgrams
from .model import DTYPE, EncoderLayer, ModelConfig, StyleGuidedStoryModel
from .trainer import Example, collate, loss_terms, seed_everything

SSC_CLASSES = (StyleToken.EMO, StyleToken.EVE, StyleToken.OTHER)


@dataclass
class MetricReport:
    ppl: float | None = None
    b1: float | None = None
    b2: float | None = None
    d1: float | None = None
    d2: float | None = None
    number: float | None = None
    lsc: float | None = None
    ssc: float | None = None

    def to_json(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- perplexity

@torch.no_grad()
def per_token_ppl(model: StyleGuidedStoryModel, examples: Sequence[Example], batch_size: int = 64) -> list[float]:
    """exp(NLL / number of gold tokens) per example, <eos> included."""
    out = []
    for i in range(0, len(examples), batch_size):
        chunk = examples[i:i + batch_size]
        l_st, _ = loss_terms(model, collate(chunk, model.cfg.vocab_size))
        out.extend(math.exp(float(nll) / len(e.target)) for nll, e in zip(l_st, chunk))
    return out


def best_of_styles_mean(per_style: Sequence[Sequence[float]], pick=min) -> float:
    """Mean over samples of ``pick`` across the styles (rows: samples, columns: styles)."""
    rows = list(per_style)
    if not rows:
        raise ValueError("no samples")
    return math.fsum(pick(r) for r in rows) / len(rows)


def ppl_best_of_styles(model: StyleGuidedStoryModel, vocab: Vocabulary, examples: Sequence[Example]) -> float:
    """Perplexity of each gold continuation under <emo> and under <eve>; mean of the per-sample minimum."""
    per_style = []
    for style in (StyleToken.EMO, StyleToken.EVE):
        restyled = [Example(e.id, vocab.style_id(style), e.leading, e.target, e.keywords) for e in examples]
        per_style.append(per_token_ppl(model, restyled))
    return best_of_styles_mean(list(zip(*per_style)), min)


# ---------------------------------------------------------------- BLEU

def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_n(candidate: Sequence[str], reference: Sequence[str], n: int) -> float:
    """Sentence BLEU up to order ``n``: clipped precisions, add-one smoothing on orders >= 2,
    geometric mean, brevity penalty exp(1 - r/c) when c <= r."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not candidate:
        raise EmptyCandidate("candidate is empty")
    log_sum = 0.0
    for order in range(1, n + 1):
        cand = _ngrams(candidate, order)
        ref = _ngrams(reference, order)
        matched = sum(min(c, ref[g]) for g, c in cand.items())
        total = sum(cand.values())
        if order >= 2:
            matched, total = matched + 1, total + 1
        if matched == 0:
            return 0.0
        log_sum += math.log(matched / total)
    c, r = len(candidate), len(reference)
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum / n)


def bleu_best_of_styles(pairs: Sequence[tuple[Sequence[str] | None, Sequence[str] | None]],
                        references: Sequence[Sequence[str]]) -> tuple[float, float]:
    """Per beginning take the better of the two style generations; average over beginnings."""
    if len(pairs) != len(references):
        raise MissingPair(f"{len(pairs)} generation pairs for {len(references)} references")
    rows_1, rows_2 = [], []
    for i, ((emo, eve), ref) in enumerate(zip(pairs, references)):
        if emo is None or eve is None:
            raise MissingPair(f"beginning {i} lacks a generation for one of the two styles")
        rows_1.append([_bleu_or_zero(emo, ref, 1), _bleu_or_zero(eve, ref, 1)])
        rows_2.append([_bleu_or_zero(emo, ref, 2), _bleu_or_zero(eve, ref, 2)])
    return best_of_styles_mean(rows_1, max), best_of_styles_mean(rows_2, max)


def _bleu_or_zero(cand, ref, n):
    # an empty generation has no overlap at all
    return bleu_n(cand, ref, n) if cand else 0.0


# ---------------------------------------------------------------- diversity

def distinct_n(stories: Iterable[Sequence[str]], n: int) -> float:
    """Corpus-level distinct n-grams / total n-grams."""
    if n < 1:
        raise ValueError("n must be >= 1")
    seen: set = set()
    total = 0
    for toks in stories:
        grams = [tuple(toks[i:i + n]) for i in range(len(toks) - n + 1)]
        total += len(grams)
        seen.update(grams)
    if total == 0:
        raise NoNgrams(f"no {n}-grams in the generated stories")
    return len(seen) / total


# ---------------------------------------------------------------- lexical style consistency

def number_metric(stories: Sequence[Sequence[str]], target: StyleToken, annotator: StyleAnnotator) -> float:
    """Mean normalized count of target-style keywords in each generated continuation."""
    if not stories:
        raise ValueError("no stories")
    mu, sigma = annotator.stats.params(target)
    vals = [normalize_count(annotator.extractor.extract_tokens(s).count(target), mu, sigma) for s in stories]
    return math.fsum(vals) / len(vals)


def label_fractions(stories: Sequence[Sequence[str]], annotator: StyleAnnotator) -> dict[StyleToken, float]:
    labels = Counter(annotator.label_tokens(s) for s in stories)
    return {tok: labels[tok] / len(stories) for tok in StyleToken}


def lsc(stories: Sequence[Sequence[str]], target: StyleToken, annotator: StyleAnnotator) -> float:
    """Fraction of generated continuations whose automatic label equals ``target``."""
    if not stories:
        raise ValueError("no stories")
    return sum(annotator.label_tokens(s) is target for s in stories) / len(stories)


# ---------------------------------------------------------------- SSC-lite

@dataclass(frozen=True)
class SscConfig:
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 1
    d_ff: int = 128
    max_len: int = 128
    epochs: int = 8
    batch_size: int = 32
    learning_rate: float = 2e-3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads or min(self.d_model, self.n_layers, self.epochs, self.batch_size) < 1:
            raise ConfigError("invalid SSC classifier configuration")


class SscClassifier(nn.Module):
    """Small transformer encoder, masked mean pooling, 3-way softmax (emo, eve, other)."""

    def __init__(self, vocab_size: int, cfg: SscConfig):
        super().__init__()
        self.cfg = cfg
        layer_cfg = ModelConfig(vocab_size=vocab_size, d_model=cfg.d_model, n_heads=cfg.n_heads,
                                d_ff=cfg.d_ff, max_len=max(cfg.max_len, 120))
        self.embed = nn.Embedding(vocab_size, cfg.d_model)
        self.pos = nn.Embedding(layer_cfg.max_len, cfg.d_model)
        self.layers = nn.ModuleList(EncoderLayer(layer_cfg) for _ in range(cfg.n_layers))
        self.norm = nn.LayerNorm(cfg.d_model)
        self.head = nn.Linear(cfg.d_model, len(SSC_CLASSES))
        self.to(DTYPE)

    def forward(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        T = ids.shape[1]
        x = self.embed(ids) + self.pos(torch.arange(T))
        attn = mask.unsqueeze(1).expand(-1, T, -1)
        for layer in self.layers:
            x = layer(x, attn)
        x = self.norm(x)
        m = mask.unsqueeze(-1).to(DTYPE)
        pooled = (x * m).sum(1) / m.sum(1).clamp_min(1.0)
        return self.head(pooled)

    @torch.no_grad()
    def predict_proba(self, sequences: Sequence[Sequence[int]], batch_size: int = 64) -> torch.Tensor:
        self.eval()
        out = []
        for i in range(0, len(sequences), batch_size):
            ids, mask = _pad([list(s)[: self.cfg.max_len] for s in sequences[i:i + batch_size]])
            out.append(torch.softmax(self(ids, mask), dim=-1))
        return torch.cat(out) if out else torch.zeros(0, len(SSC_CLASSES), dtype=DTYPE)


def _pad(seqs: Sequence[Sequence[int]]):
    T = max(1, max((len(s) for s in seqs), default=1))
    ids = torch.zeros(len(seqs), T, dtype=torch.long)
    mask = torch.zeros(len(seqs), T, dtype=torch.bool)
    for b, s in enumerate(seqs):
        if s:
            ids[b, : len(s)] = torch.tensor(s)
            mask[b, : len(s)] = True
        else:
            mask[b, 0] = True  # empty continuation: attend to a single pad slot
    return ids, mask


@dataclass
class ClassifierReport:
    accuracy: float
    majority_baseline: float
    f1: dict[str, float] = field(default_factory=dict)
    n_eval: int = 0

    def to_json(self) -> dict:
        return asdict(self)


def classification_report(gold: Sequence[int], pred: Sequence[int]) -> ClassifierReport:
    n = len(gold)
    acc = sum(g == p for g, p in zip(gold, pred)) / n if n else 0.0
    majority = Counter(gold).most_common(1)[0][1] / n if n else 0.0
    f1 = {}
    for c, tok in enumerate(SSC_CLASSES):
        tp = sum(g == c and p == c for g, p in zip(gold, pred))
        fp = sum(g != c and p == c for g, p in zip(gold, pred))
        fn = sum(g == c and p != c for g, p in zip(gold, pred))
        f1[tok.name.lower()] = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    return ClassifierReport(acc, majority, f1, n)


def train_ssc_classifier(train: Sequence[AnnotatedStory], vocab: Vocabulary, cfg: SscConfig = SscConfig(),
                         held_out: Sequence[AnnotatedStory] = ()) -> tuple[SscClassifier, ClassifierReport | None]:
    """Fit the style classifier on continuation tokens against the automatic labels."""
    if not train:
        raise ConfigError("no training stories for the SSC classifier")
    seed_everything(cfg.seed)
    model = SscClassifier(len(vocab), cfg)
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate)
    xs = [vocab.encode(a.story.continuation_tokens())[: cfg.max_len] for a in train]
    ys = [SSC_CLASSES.index(a.label) for a in train]
    order = list(range(len(xs)))
    rng = random.Random(cfg.seed)
    loss_fn = nn.CrossEntropyLoss()
    for _ in range(cfg.epochs):
        model.train()
        rng.shuffle(order)
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            ids, mask = _pad([xs[j] for j in idx])
            loss = loss_fn(model(ids, mask), torch.tensor([ys[j] for j in idx]))
            opt.zero_grad()
            loss.backward()
            opt.step()
    model.eval()
    report = None
    if held_out:
        probs = model.predict_proba([vocab.encode(a.story.continuation_tokens()) for a in held_out])
        pred = probs.argmax(-1).tolist()
        report = classification_report([SSC_CLASSES.index(a.label) for a in held_out], pred)
    return model, report


def ssc(classifier: SscClassifier, stories: Sequence[Sequence[int]], target: StyleToken) -> float:
    """Mean classifier probability of ``target`` over generated continuations (token ids)."""
    if not stories:
        raise ValueError("no stories")
    probs = classifier.predict_proba(stories)
    return float(probs[:, SSC_CLASSES.index(target)].mean())


def ssc_from_probs(probs: Sequence[Sequence[float]], target: StyleToken) -> float:
    col = SSC_CLASSES.index(target)
    return math.fsum(p[col] for p in probs) / len(probs)
