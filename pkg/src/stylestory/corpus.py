"""Story corpora: loading, delexicalization, splitting, tokenization and the vocabulary."""
from __future__ import annotations

import csv
import enum
import hashlib
import json
import math
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .errors import FormatError


class StyleToken(str, enum.Enum):
    EMO = "<emo>"
    EVE = "<eve>"
    OTHER = "<other>"

    @classmethod
    def parse(cls, value: str) -> "StyleToken":
        for tok in cls:
            if value in (tok.value, tok.name, tok.name.lower()):
                return tok
        raise ValueError(f"unknown style token {value!r}")

    def opposite(self) -> "StyleToken":
        if self is StyleToken.OTHER:
            return self
        return StyleToken.EVE if self is StyleToken.EMO else StyleToken.EMO


PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<bos>", "<eos>"
MALE, FEMALE, NEUTRAL = "<MALE>", "<FEMALE>", "<NEUTRAL>"

# Fixed order; ids 0..9 are stable across vocabularies.
RESERVED_TOKENS: tuple[str, ...] = (
    PAD, UNK, BOS, EOS,
    StyleToken.EMO.value, StyleToken.EVE.value, StyleToken.OTHER.value,
    MALE, FEMALE, NEUTRAL,
)
PLACEHOLDERS = frozenset({MALE, FEMALE, NEUTRAL})


@dataclass(frozen=True)
class Story:
    id: str
    sentences: tuple[str, ...]

    def __post_init__(self) -> None:
        sents = tuple(s.strip() for s in self.sentences)
        if len(sents) < 2:
            raise ValueError(f"story {self.id!r} needs at least 2 sentences, got {len(sents)}")
        if any(not s for s in sents):
            raise ValueError(f"story {self.id!r} has an empty sentence")
        object.__setattr__(self, "sentences", sents)

    @property
    def leading(self) -> str:
        return self.sentences[0]

    @property
    def continuation(self) -> tuple[str, ...]:
        return self.sentences[1:]

    def leading_tokens(self) -> list[str]:
        return tokenize(self.leading)

    def continuation_tokens(self) -> list[str]:
        return [tok for sent in self.continuation for tok in tokenize(sent)]


# ---------------------------------------------------------------- loading

def _record_to_story(record: dict, where: str) -> Story:
    if not isinstance(record, dict):
        raise FormatError(f"{where}: expected an object")
    story_id = record.get("id", record.get("storyid"))
    if story_id is None:
        raise FormatError(f"{where}: record has no id")
    sentences = record.get("sentences")
    if sentences is None:
        keys = sorted((k for k in record if re.fullmatch(r"sentence\d+", k)), key=lambda k: int(k[8:]))
        sentences = [record[k] for k in keys]
    if not isinstance(sentences, list) or not all(isinstance(s, str) for s in sentences):
        raise FormatError(f"{where}: record {story_id!r} has malformed sentences")
    try:
        return Story(str(story_id), tuple(sentences))
    except ValueError as exc:
        raise FormatError(f"{where}: {exc}") from None


def load_corpus(path: str | Path, format: str | None = None) -> list[Story]:
    """Read stories from jsonl (``id``, ``sentences``) or csv (``storyid``/``id``, ``sentenceN``).

    Raises FileNotFoundError for a missing file and FormatError, with the line
    number, for a malformed record.
    """
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    if format not in ("jsonl", "csv"):
        raise ValueError(f"unsupported corpus format {format!r}")
    stories: list[Story] = []
    with path.open(encoding="utf-8", newline="") as fh:
        if format == "jsonl":
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise FormatError(f"{path}:{lineno}: invalid json ({exc.msg})") from None
                stories.append(_record_to_story(record, f"{path}:{lineno}"))
        else:
            reader = csv.DictReader(fh)
            for row in reader:
                stories.append(_record_to_story(dict(row), f"{path}:{reader.line_num}"))
    return stories


def save_corpus(stories: Iterable[Story], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for s in stories:
            fh.write(json.dumps({"id": s.id, "sentences": list(s.sentences)}) + "\n")


# ---------------------------------------------------------------- delexicalization

@dataclass(frozen=True)
class NameLexicon:
    male: frozenset[str] = frozenset()
    female: frozenset[str] = frozenset()
    neutral: frozenset[str] = frozenset()
    _pattern: re.Pattern | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        for name in ("male", "female", "neutral"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))
        overlap = (self.male & self.female) | (self.male & self.neutral) | (self.female & self.neutral)
        if overlap:
            raise ValueError(f"names listed under more than one class: {sorted(overlap)}")
        names = sorted(self.male | self.female | self.neutral, key=lambda n: (-len(n), n))
        if names:
            alt = "|".join(re.escape(n) for n in names)
            # whole tokens only; never rewrite inside an existing <PLACEHOLDER>
            pattern = re.compile(rf"(?<![\w<])(?:{alt})(?![\w>])")
            object.__setattr__(self, "_pattern", pattern)

    @classmethod
    def from_files(cls, male: str | Path, female: str | Path, neutral: str | Path) -> "NameLexicon":
        return cls(_read_lines(male), _read_lines(female), _read_lines(neutral))

    @classmethod
    def from_dir(cls, directory: str | Path) -> "NameLexicon":
        d = Path(directory)
        return cls.from_files(d / "male.txt", d / "female.txt", d / "neutral.txt")

    @classmethod
    def bundled(cls) -> "NameLexicon":
        return cls(*(_read_lines(data_path(f"{g}.txt")) for g in ("male", "female", "neutral")))

    def placeholder(self, name: str) -> str:
        if name in self.male:
            return MALE
        if name in self.female:
            return FEMALE
        return NEUTRAL


def _read_lines(path: str | Path) -> frozenset[str]:
    with Path(path).open(encoding="utf-8") as fh:
        return frozenset(line.strip() for line in fh if line.strip())


def data_path(name: str) -> Path:
    return Path(str(resources.files("stylestory") / "data" / name))


def delexicalize_text(text: str, names: NameLexicon) -> str:
    if names._pattern is None:
        return text
    return names._pattern.sub(lambda m: names.placeholder(m.group(0)), text)


def delexicalize(story: Story, names: NameLexicon) -> Story:
    return Story(story.id, tuple(delexicalize_text(s, names) for s in story.sentences))


# ---------------------------------------------------------------- tokenization

_TOKEN_RE = re.compile(r"<[A-Za-z]+>|[A-Za-z0-9]+(?:'[A-Za-z]+)*|[^\sA-Za-z0-9]")


def tokenize(sentence: str) -> list[str]:
    """Lowercased word tokens; each punctuation mark is its own token; ``<MALE>``-style placeholders stay intact."""
    out = []
    for tok in _TOKEN_RE.findall(sentence):
        if tok.startswith("<") and len(tok) > 1:
            out.append(tok if tok in PLACEHOLDERS or tok in RESERVED_TOKENS else tok.lower())
        else:
            out.append(tok.lower())
    return out


def detokenize(tokens: Sequence[str]) -> str:
    text = " ".join(tokens)
    return re.sub(r" ([.,!?;:])", r"\1", text)


# ---------------------------------------------------------------- splitting

@dataclass(frozen=True)
class SplitConfig:
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self) -> None:
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios):
            raise ValueError(f"ratios must be three non-negative numbers, got {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"ratios must sum to 1, got {sum(self.ratios)}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    # the epsilon absorbs binary rounding such as 0.1 * 70 = 7.000000000000001 / 0.29 * 100 = 28.999...
    n_valid = math.floor(ratios[1] * n + 1e-9)
    n_test = math.floor(ratios[2] * n + 1e-9)
    return n - n_valid - n_test, n_valid, n_test


def split_corpus(stories: Sequence[Story], cfg: SplitConfig = SplitConfig()):
    """Shuffle with ``random.Random(cfg.seed)`` and cut into (train, valid, test).

    Valid/test sizes are floored; the remainder goes to train.
    """
    order = list(range(len(stories)))
    random.Random(cfg.seed).shuffle(order)
    n_train, n_valid, _ = split_sizes(len(stories), cfg.ratios)
    train = [stories[i] for i in order[:n_train]]
    valid = [stories[i] for i in order[n_train:n_train + n_valid]]
    test = [stories[i] for i in order[n_train + n_valid:]]
    return train, valid, test


# ---------------------------------------------------------------- vocabulary

class Vocabulary:
    def __init__(self, tokens: Iterable[str] = ()):
        self._itos: list[str] = list(RESERVED_TOKENS)
        self._stoi: dict[str, int] = {t: i for i, t in enumerate(self._itos)}
        for tok in tokens:
            if tok not in self._stoi:
                self._stoi[tok] = len(self._itos)
                self._itos.append(tok)

    pad_id, unk_id, bos_id, eos_id = 0, 1, 2, 3

    def __len__(self) -> int:
        return len(self._itos)

    def __contains__(self, token: str) -> bool:
        return token in self._stoi

    @property
    def tokens(self) -> list[str]:
        return list(self._itos)

    def token_to_id(self, token: str) -> int:
        return self._stoi.get(token, self.unk_id)

    def id_to_token(self, idx: int) -> str:
        return self._itos[idx]

    def style_id(self, style: StyleToken) -> int:
        return self._stoi[style.value]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self._stoi.get(t, self.unk_id) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self._itos[i] for i in ids]

    @property
    def control_ids(self) -> frozenset[int]:
        """Ids that never belong in generated text (padding, bos, style tokens)."""
        return frozenset({self.pad_id, self.bos_id, *(self._stoi[s.value] for s in StyleToken)})

    def sha256(self) -> str:
        return hashlib.sha256("\n".join(self._itos).encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({"tokens": self._itos}, indent=0) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        tokens = json.loads(Path(path).read_text(encoding="utf-8"))["tokens"]
        if tuple(tokens[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise FormatError(f"{path}: reserved tokens out of order")
        return cls(tokens[len(RESERVED_TOKENS):])


def build_vocab(train: Iterable[Story], min_count: int = 1) -> Vocabulary:
    """Reserved tokens first, then training tokens with count >= ``min_count`` by (-count, token)."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts: Counter[str] = Counter()
    for story in train:
        for sent in story.sentences:
            counts.update(tokenize(sent))
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(kept)
