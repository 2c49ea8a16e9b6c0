"""Style labeling from Gaussian-normalized keyword counts."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import Story, StyleToken
from .errors import InsufficientData
from .keywords import KeywordExtractor, KeywordSet, fit_banned_stems

SIGMA_FLOOR = 1e-6
TAU1 = 0.7
TAU2 = 0.3
N_OTHER_KEYWORDS = 5


@dataclass(frozen=True)
class StyleStats:
    mu_emo: float
    sigma_emo: float
    mu_eve: float
    sigma_eve: float
    n_fit: int

    def params(self, style: StyleToken) -> tuple[float, float]:
        if style is StyleToken.EMO:
            return self.mu_emo, self.sigma_emo
        if style is StyleToken.EVE:
            return self.mu_eve, self.sigma_eve
        raise ValueError(f"no statistics for {style}")

    def to_json(self) -> dict:
        return {"mu_emo": self.mu_emo, "sigma_emo": self.sigma_emo,
                "mu_eve": self.mu_eve, "sigma_eve": self.sigma_eve, "n_fit": self.n_fit}

    @classmethod
    def from_json(cls, obj: Mapping) -> "StyleStats":
        return cls(float(obj["mu_emo"]), float(obj["sigma_emo"]),
                   float(obj["mu_eve"]), float(obj["sigma_eve"]), int(obj["n_fit"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "StyleStats":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _mean_std(values: Sequence[int]) -> tuple[float, float]:
    # population standard deviation, floored
    mu = math.fsum(values) / len(values)
    var = math.fsum((v - mu) ** 2 for v in values) / len(values)
    return mu, max(math.sqrt(var), SIGMA_FLOOR)


def fit_style_stats(train: Iterable[KeywordSet]) -> StyleStats:
    kws = list(train)
    if len(kws) < 2:
        raise InsufficientData(f"need at least 2 training stories, got {len(kws)}")
    mu_emo, sigma_emo = _mean_std([len(k.emotion) for k in kws])
    mu_eve, sigma_eve = _mean_std([len(k.event) for k in kws])
    return StyleStats(mu_emo, sigma_emo, mu_eve, sigma_eve, len(kws))


def normalize_count(n: float, mu: float, sigma: float) -> float:
    """P(N <= n) for N ~ Normal(mu, sigma^2)."""
    return 0.5 * math.erfc(-(n - mu) / (sigma * math.sqrt(2.0)))


def assign_label(n_emo: float, n_eve: float, tau1: float = TAU1, tau2: float = TAU2) -> StyleToken:
    if (n_emo < tau1 and n_eve < tau1) or abs(n_emo - n_eve) < tau2:
        return StyleToken.OTHER
    return StyleToken.EMO if n_emo > n_eve else StyleToken.EVE


def _by_salience(words: Sequence[str]) -> list[str]:
    counts = Counter(words)
    first: dict[str, int] = {}
    for i, w in enumerate(words):
        first.setdefault(w, i)
    return sorted(counts, key=lambda w: (-counts[w], first[w]))


def select_other_keywords(kws: KeywordSet, limit: int = N_OTHER_KEYWORDS) -> list[str]:
    """Alternate emotion/event keywords, each side ranked by (-frequency, first position).

    Starts with the emotion side; when one side runs out the other continues.
    A word already taken is skipped.
    """
    queues = [_by_salience(kws.emotion), _by_salience(kws.event)]
    picked: list[str] = []
    side = 0
    while len(picked) < limit and any(queues):
        queue = queues[side] if queues[side] else queues[1 - side]
        word = queue.pop(0)
        if word not in picked:
            picked.append(word)
        side = 1 - side
    return picked


@dataclass(frozen=True)
class AnnotatedStory:
    story: Story
    label: StyleToken
    keywords: KeywordSet
    planning_keywords: tuple[str, ...]
    n_prime_emo: float
    n_prime_eve: float
    split: str | None = None

    def to_json(self) -> dict:
        record = {"id": self.story.id, "sentences": list(self.story.sentences)}
        if self.split is not None:
            record["split"] = self.split
        record.update({
            "label": self.label.value,
            "n_prime_emo": self.n_prime_emo,
            "n_prime_eve": self.n_prime_eve,
            "planning_keywords": list(self.planning_keywords),
            "emotion_keywords": list(self.keywords.emotion),
            "event_keywords": list(self.keywords.event),
        })
        return record

    @classmethod
    def from_json(cls, obj: Mapping) -> "AnnotatedStory":
        return cls(
            story=Story(str(obj["id"]), tuple(obj["sentences"])),
            label=StyleToken.parse(obj["label"]),
            keywords=KeywordSet(tuple(obj.get("emotion_keywords", ())), tuple(obj.get("event_keywords", ()))),
            planning_keywords=tuple(obj["planning_keywords"]),
            n_prime_emo=float(obj["n_prime_emo"]),
            n_prime_eve=float(obj["n_prime_eve"]),
            split=obj.get("split"),
        )


@dataclass(frozen=True)
class StyleAnnotator:
    """Frozen annotation assets: extractor (with banned stems), fitted stats and thresholds."""

    extractor: KeywordExtractor
    stats: StyleStats
    tau1: float = TAU1
    tau2: float = TAU2

    def normalized(self, kws: KeywordSet) -> tuple[float, float]:
        return (normalize_count(len(kws.emotion), self.stats.mu_emo, self.stats.sigma_emo),
                normalize_count(len(kws.event), self.stats.mu_eve, self.stats.sigma_eve))

    def label_keywords(self, kws: KeywordSet) -> StyleToken:
        return assign_label(*self.normalized(kws), self.tau1, self.tau2)

    def label_tokens(self, continuation: Sequence[str]) -> StyleToken:
        return self.label_keywords(self.extractor.extract_tokens(continuation))

    def annotate(self, story: Story, split: str | None = None) -> AnnotatedStory:
        kws = self.extractor.extract(story)
        n_emo, n_eve = self.normalized(kws)
        label = assign_label(n_emo, n_eve, self.tau1, self.tau2)
        if label is StyleToken.EMO:
            planning = kws.emotion
        elif label is StyleToken.EVE:
            planning = kws.event
        else:
            planning = tuple(select_other_keywords(kws))
        return AnnotatedStory(story, label, kws, tuple(planning), n_emo, n_eve, split)


@dataclass
class AnnotationResult:
    stories: dict[str, list[AnnotatedStory]] = field(default_factory=dict)
    summary: dict[str, dict[str, float]] = field(default_factory=dict)

    def all(self) -> list[AnnotatedStory]:
        return [a for split in self.stories.values() for a in split]


def label_distribution(annotated: Sequence[AnnotatedStory]) -> dict[str, float]:
    counts = Counter(a.label for a in annotated)
    n = len(annotated)
    dist = {tok.name.lower(): (counts[tok] / n if n else 0.0) for tok in StyleToken}
    dist["n"] = n
    return dist


def annotate_corpus(splits: Mapping[str, Sequence[Story]], annotator: StyleAnnotator) -> AnnotationResult:
    """Label every story of every split; ``annotator.stats`` must come from the training split."""
    result = AnnotationResult()
    for name, stories in splits.items():
        annotated = [annotator.annotate(s, split=name) for s in stories]
        result.stories[name] = annotated
        result.summary[name] = label_distribution(annotated)
    return result


def fit_annotator(train: Sequence[Story], extractor: KeywordExtractor, n_banned: int = 10,
                  tau1: float = TAU1, tau2: float = TAU2):
    """Fit verb IDF, banned stems and style statistics on the training split.

    Returns ``(annotator, idf_table)``.
    """
    idf, banned = fit_banned_stems(train, extractor, n_banned)
    extractor = extractor.with_banned(banned)
    stats = fit_style_stats(extractor.extract(s) for s in train)
    return StyleAnnotator(extractor, stats, tau1, tau2), idf


def format_distribution_table(summary: Mapping[str, Mapping[str, float]]) -> str:
    splits = list(summary)
    rows = [("Styles", *(s.capitalize() for s in splits))]
    names = {"emo": "Emotion-driven", "eve": "Event-driven", "other": "Others"}
    for key, label in names.items():
        rows.append((label, *(f"{100 * summary[s][key]:.1f}%" for s in splits)))
    rows.append(("Stories", *(str(int(summary[s]["n"])) for s in splits)))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
