"""Synthetic story corpora with known per-story keyword counts.

Each story has a leading sentence and four continuation sentences built from
clauses. Emotion words show up only in ``<pron> was <word>`` clauses, event verbs
only in ``<pron> <verb> the <noun>`` clauses, and every story also gets filler
clauses that use a small set of very common verbs. Those common verbs land in
the bottom-IDF band and get filtered out, so the number of stylistic keywords
in each continuation equals the drawn ``n_emo`` / ``n_eve``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .corpus import NameLexicon, Story
from .errors import ConfigError

DEFAULT_EMO_VOCAB: dict[str, tuple[str, ...]] = {
    "happy": ("joy", "positive"), "glad": ("joy",), "cheerful": ("joy",), "joyful": ("joy",),
    "wonderful": ("joy", "surprise"), "proud": ("joy", "trust"), "lovely": ("joy",),
    "afraid": ("fear",), "nervous": ("fear", "anticipation"), "anxious": ("fear",),
    "angry": ("anger",), "furious": ("anger", "disgust"), "mad": ("anger",),
    "sad": ("sadness",), "lonely": ("sadness",), "gloomy": ("sadness",), "miserable": ("sadness", "disgust"),
    "gross": ("disgust",), "nasty": ("disgust", "anger"), "awful": ("disgust", "fear"),
    "terrible": ("fear", "sadness"), "horrible": ("disgust", "fear"), "sorry": ("sadness",),
    "sick": ("disgust", "sadness"),
}

DEFAULT_EVE_VOCAB: tuple[str, ...] = (
    "jumped", "kicked", "climbed", "pushed", "pulled", "painted", "cleaned", "fixed", "washed",
    "opened", "cooked", "baked", "planted", "carried", "dropped", "lifted", "grabbed", "tossed",
    "chased", "visited", "packed", "locked", "filled", "raced", "crossed", "rolled", "pressed",
    "folded", "stacked", "wrapped", "polished", "scrubbed", "hammered", "repaired", "delivered",
    "collected", "checked", "picked", "dragged", "loaded",
)

COMMON_VERBS: tuple[str, ...] = ("got", "took", "saw", "made", "found", "put", "kept", "held", "brought", "gave")
NOUNS: tuple[str, ...] = ("box", "ball", "car", "door", "tree", "bike", "phone", "table", "window", "book",
                          "cup", "bag", "hat", "lamp", "chair")
PLACES: tuple[str, ...] = ("park", "store", "beach", "school", "mall", "city", "farm", "lake")
LEAD_VERBS: tuple[str, ...] = ("went", "drove", "ran")
NEUTRAL_ADJ: tuple[str, ...] = ("big", "small", "red", "old", "new", "blue")

KINDS = ("emo", "eve", "other")


@dataclass(frozen=True)
class SynthConfig:
    n_stories: int = 600
    emo_vocab: dict[str, tuple[str, ...]] = field(default_factory=lambda: dict(DEFAULT_EMO_VOCAB))
    eve_vocab: tuple[str, ...] = DEFAULT_EVE_VOCAB
    # mean keyword counts (emotion, event) for each story kind
    densities: dict[str, tuple[float, float]] = field(default_factory=lambda: {
        "emo": (7.0, 0.3), "eve": (0.3, 7.0), "other": (2.0, 2.0),
    })
    kind_weights: dict[str, float] = field(default_factory=lambda: {"emo": 0.3, "eve": 0.3, "other": 0.4})
    filler_clauses: int = 3
    max_count: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_stories < 0:
            raise ConfigError("n_stories must be >= 0")
        overlap = set(self.emo_vocab) & set(self.eve_vocab)
        if overlap:
            raise ConfigError(f"emotion and event vocabularies overlap: {sorted(overlap)}")
        if set(self.densities) != set(KINDS) or set(self.kind_weights) != set(KINDS):
            raise ConfigError(f"densities and kind_weights need exactly the kinds {KINDS}")
        if any(d < 0 for pair in self.densities.values() for d in pair):
            raise ConfigError("densities must be >= 0")
        if any(w < 0 for w in self.kind_weights.values()) or sum(self.kind_weights.values()) <= 0:
            raise ConfigError("kind_weights must be non-negative with a positive sum")
        if not self.emo_vocab or not self.eve_vocab:
            raise ConfigError("both vocabularies must be non-empty")

    @classmethod
    def from_json(cls, obj: dict) -> "SynthConfig":
        obj = dict(obj)
        if "emo_vocab" in obj:
            obj["emo_vocab"] = {w: tuple(labels) for w, labels in obj["emo_vocab"].items()}
        if "eve_vocab" in obj:
            obj["eve_vocab"] = tuple(obj["eve_vocab"])
        if "densities" in obj:
            obj["densities"] = {k: tuple(v) for k, v in obj["densities"].items()}
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


@dataclass(frozen=True)
class SynthStory:
    story: Story
    kind: str
    n_emo: int
    n_eve: int

    def to_json(self) -> dict:
        return {"id": self.story.id, "sentences": list(self.story.sentences),
                "kind": self.kind, "n_emo": self.n_emo, "n_eve": self.n_eve}


_PRONOUNS = {"male": ("he", "was"), "female": ("she", "was"), "neutral": ("they", "were")}


def generate_corpus(cfg: SynthConfig, names: NameLexicon | None = None) -> list[SynthStory]:
    names = names or NameLexicon.bundled()
    pools = [(g, sorted(getattr(names, g))) for g in ("male", "female", "neutral") if getattr(names, g)]
    rng = np.random.default_rng(cfg.seed)
    kinds = list(KINDS)
    weights = np.array([cfg.kind_weights[k] for k in kinds], dtype=float)
    weights /= weights.sum()
    emo_words = sorted(cfg.emo_vocab)
    eve_words = list(cfg.eve_vocab)
    out = []
    for i in range(cfg.n_stories):
        kind = kinds[int(rng.choice(len(kinds), p=weights))]
        gender, pool = pools[int(rng.integers(len(pools)))]
        name = pool[int(rng.integers(len(pool)))]
        pron, be = _PRONOUNS[gender]
        lam_emo, lam_eve = cfg.densities[kind]
        n_emo = min(int(rng.poisson(lam_emo)), cfg.max_count)
        n_eve = min(int(rng.poisson(lam_eve)), cfg.max_count)

        def noun() -> str:
            return NOUNS[int(rng.integers(len(NOUNS)))]

        clauses = []
        for _ in range(n_emo):
            clauses.append(f"{pron} {be} {emo_words[int(rng.integers(len(emo_words)))]}")
        for _ in range(n_eve):
            clauses.append(f"{pron} {eve_words[int(rng.integers(len(eve_words)))]} the {noun()}")
        for _ in range(cfg.filler_clauses):
            clauses.append(f"{pron} {COMMON_VERBS[int(rng.integers(len(COMMON_VERBS)))]} the {noun()}")
        while len(clauses) < 4:
            clauses.append(f"the {noun()} was {NEUTRAL_ADJ[int(rng.integers(len(NEUTRAL_ADJ)))]}")
        order = rng.permutation(len(clauses))
        clauses = [clauses[j] for j in order]
        groups = np.array_split(np.arange(len(clauses)), 4)
        sentences = [" and ".join(clauses[j] for j in g) for g in groups]
        sentences = [s[0].upper() + s[1:] + "." for s in sentences]
        lead = (f"{name} {LEAD_VERBS[int(rng.integers(len(LEAD_VERBS)))]} to the "
                f"{PLACES[int(rng.integers(len(PLACES)))]}.")
        out.append(SynthStory(Story(f"synth-{i:05d}", (lead, *sentences)), kind, n_emo, n_eve))
    return out


def write_lexicon(cfg: SynthConfig, path: str | Path) -> None:
    """Write the emotion vocabulary as an NRC-layout TSV (one row per word/label pair set to 1)."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for word in sorted(cfg.emo_vocab):
            for label in sorted(cfg.emo_vocab[word]):
                fh.write(f"{word}\t{label}\t1\n")


def write_corpus(stories: list[SynthStory], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for s in stories:
            fh.write(json.dumps(s.to_json()) + "\n")


def config_to_json(cfg: SynthConfig) -> dict:
    obj = asdict(cfg)
    obj["eve_vocab"] = list(cfg.eve_vocab)
    obj["emo_vocab"] = {w: list(v) for w, v in cfg.emo_vocab.items()}
    obj["densities"] = {k: list(v) for k, v in cfg.densities.items()}
    return obj
