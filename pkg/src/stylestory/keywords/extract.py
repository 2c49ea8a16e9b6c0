"""Emotion-style and event-style keyword extraction and verb IDF filtering."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from ..corpus import Story, StyleToken, data_path
from ..errors import EmptyCorpus, FormatError, LengthMismatch
from .porter import porter_stem
from .tagger import VERB_TAGS, LexiconTagger, Tagger

EMOTION_LABELS = frozenset({"fear", "anger", "surprise", "sadness", "disgust", "joy"})


class EmotionLexicon:
    """word -> set of emotion labels (any labels, not only the six used for styling)."""

    def __init__(self, entries: Mapping[str, Iterable[str]] | None = None):
        self._labels: dict[str, frozenset[str]] = {}
        for word, labels in (entries or {}).items():
            labels = frozenset(labels)
            if labels:
                key = word.lower()
                self._labels[key] = self._labels.get(key, frozenset()) | labels

    @classmethod
    def from_nrc(cls, path: str | Path) -> "EmotionLexicon":
        """Parse ``word<TAB>emotion<TAB>0|1`` lines (NRC word-level association file layout)."""
        entries: dict[str, set[str]] = {}
        with Path(path).open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != 3 or parts[2] not in ("0", "1"):
                    raise FormatError(f"{path}:{lineno}: expected word<TAB>emotion<TAB>0|1")
                word, label, flag = parts
                if flag == "1":
                    entries.setdefault(word, set()).add(label)
        return cls(entries)

    @classmethod
    def bundled(cls) -> "EmotionLexicon":
        return cls.from_nrc(data_path("emotion_lexicon.tsv"))

    def labels(self, word: str) -> frozenset[str]:
        return self._labels.get(word, frozenset())

    def __len__(self) -> int:
        return len(self._labels)

    def __contains__(self, word: str) -> bool:
        return word in self._labels


def load_wordlist(path: str | Path) -> frozenset[str]:
    with Path(path).open(encoding="utf-8") as fh:
        return frozenset(line.strip().lower() for line in fh if line.strip())


def bundled_stopwords() -> frozenset[str]:
    return load_wordlist(data_path("stopwords.txt"))


def emotion_keywords(tokens: Sequence[str], lex: EmotionLexicon) -> list[str]:
    return [t for t in tokens if lex.labels(t) & EMOTION_LABELS]


def verb_tokens(tokens: Sequence[str], tags: Sequence[str], stopwords: frozenset[str] = frozenset()) -> list[str]:
    if len(tokens) != len(tags):
        raise LengthMismatch(f"{len(tokens)} tokens but {len(tags)} tags")
    return [t for t, tag in zip(tokens, tags) if tag in VERB_TAGS and t not in stopwords]


def event_keywords(
    tokens: Sequence[str],
    tags: Sequence[str],
    stopwords: frozenset[str] = frozenset(),
    banned_stems: frozenset[str] = frozenset(),
) -> list[str]:
    return [t for t in verb_tokens(tokens, tags, stopwords) if porter_stem(t) not in banned_stems]


# ---------------------------------------------------------------- IDF

@dataclass(frozen=True)
class IdfTable:
    idf: Mapping[str, float]
    n_docs: int
    df: Mapping[str, int] = field(default_factory=dict)

    def __getitem__(self, stem: str) -> float:
        # KeyError for an unseen stem; never conflated with idf 0
        return self.idf[stem]

    def __contains__(self, stem: str) -> bool:
        return stem in self.idf

    def __len__(self) -> int:
        return len(self.idf)

    def to_json(self) -> dict:
        return {"n_docs": self.n_docs, "idf": dict(sorted(self.idf.items())), "df": dict(sorted(self.df.items()))}

    @classmethod
    def from_json(cls, obj: dict) -> "IdfTable":
        return cls(idf={k: float(v) for k, v in obj["idf"].items()}, n_docs=int(obj["n_docs"]),
                   df={k: int(v) for k, v in obj.get("df", {}).items()})

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "IdfTable":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def compute_idf(docs: Iterable[Sequence[str]]) -> IdfTable:
    """IDF over stemmed verb keywords: idf(t) = ln(n_docs / df(t)).

    ``docs`` holds one verb-keyword list per training story.
    """
    df: Counter[str] = Counter()
    n_docs = 0
    for words in docs:
        n_docs += 1
        df.update({porter_stem(w) for w in words})
    if n_docs == 0:
        raise EmptyCorpus("cannot compute IDF over zero documents")
    idf = {stem: math.log(n_docs / count) for stem, count in df.items()}
    return IdfTable(idf=idf, n_docs=n_docs, df=dict(df))


def bottom_k_idf(table: IdfTable, k: int) -> frozenset[str]:
    """The ``k`` stems with the lowest IDF, ties broken by ascending stem."""
    if k < 0:
        raise ValueError("k must be non-negative")
    ranked = sorted(table.idf.items(), key=lambda kv: (kv[1], kv[0]))
    return frozenset(stem for stem, _ in ranked[:k])


# ---------------------------------------------------------------- composition

@dataclass(frozen=True)
class KeywordSet:
    emotion: tuple[str, ...] = ()
    event: tuple[str, ...] = ()

    def count(self, style: StyleToken) -> int:
        if style is StyleToken.EMO:
            return len(self.emotion)
        if style is StyleToken.EVE:
            return len(self.event)
        raise ValueError(f"no keyword count for {style}")

    def is_empty(self) -> bool:
        return not self.emotion and not self.event


@dataclass(frozen=True)
class KeywordExtractor:
    """Everything needed to pull stylistic keywords out of a token sequence."""

    lexicon: EmotionLexicon
    tagger: Tagger
    stopwords: frozenset[str] = frozenset()
    banned_stems: frozenset[str] = frozenset()

    @classmethod
    def bundled(cls, banned_stems: frozenset[str] = frozenset()) -> "KeywordExtractor":
        return cls(EmotionLexicon.bundled(), LexiconTagger.bundled(), bundled_stopwords(), banned_stems)

    def with_banned(self, banned_stems: Iterable[str]) -> "KeywordExtractor":
        return KeywordExtractor(self.lexicon, self.tagger, self.stopwords, frozenset(banned_stems))

    def verbs(self, tokens: Sequence[str]) -> list[str]:
        return verb_tokens(tokens, self.tagger.tag(tokens), self.stopwords)

    def extract_tokens(self, tokens: Sequence[str]) -> KeywordSet:
        tags = self.tagger.tag(tokens)
        return KeywordSet(
            emotion=tuple(emotion_keywords(tokens, self.lexicon)),
            event=tuple(event_keywords(tokens, tags, self.stopwords, self.banned_stems)),
        )

    def extract(self, story: Story) -> KeywordSet:
        """Keywords of the continuation only (the part a model generates)."""
        return self.extract_tokens(story.continuation_tokens())


def extract_keywords(story: Story, lex: EmotionLexicon, tagger: Tagger,
                     stopwords: frozenset[str], banned_stems: frozenset[str]) -> KeywordSet:
    return KeywordExtractor(lex, tagger, stopwords, banned_stems).extract(story)


def fit_banned_stems(train: Iterable[Story], extractor: KeywordExtractor, k: int = 10) -> tuple[IdfTable, frozenset[str]]:
    """IDF over the training stories' verbs (stop words removed), and its bottom-``k`` stems."""
    table = compute_idf(extractor.verbs(s.continuation_tokens()) for s in train)
    return table, bottom_k_idf(table, k)
