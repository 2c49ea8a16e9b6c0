"""Deterministic part-of-speech tagging: a word->tag lexicon backed by suffix rules.

Penn Treebank tag names are used throughout. Resolution order for a token:

1. ``<MALE>``/``<FEMALE>``/``<NEUTRAL>`` placeholders -> ``NNP``
2. punctuation -> its Penn punctuation tag (``.``, ``,``, ``:``, ...)
3. digits -> ``CD``
4. lexicon entry
5. first matching row of :data:`SUFFIX_RULES`
6. ``NN``
"""
from __future__ import annotations

import re
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from ..corpus import PLACEHOLDERS, data_path

VERB_TAGS = frozenset({"VB", "VBD", "VBG", "VBN", "VBP", "VBZ"})

# (suffix, minimum token length, tag); checked top to bottom
SUFFIX_RULES: tuple[tuple[str, int, str], ...] = (
    ("ness", 6, "NN"),
    ("ment", 6, "NN"),
    ("tion", 6, "NN"),
    ("sion", 6, "NN"),
    ("ity", 5, "NN"),
    ("ing", 5, "VBG"),
    ("ed", 4, "VBD"),
    ("ly", 4, "RB"),
    ("ful", 5, "JJ"),
    ("ous", 5, "JJ"),
    ("able", 6, "JJ"),
    ("ible", 6, "JJ"),
    ("ive", 5, "JJ"),
    ("est", 5, "JJS"),
    ("er", 4, "NN"),
    ("ss", 3, "NN"),
    ("s", 4, "NNS"),
)

_PUNCT_TAGS = {
    ".": ".", "!": ".", "?": ".",
    ",": ",", ";": ":", ":": ":", "-": ":",
    "(": "(", ")": ")", '"': "''", "'": "''", "$": "$", "#": "#",
}


class Tagger(Protocol):
    def tag(self, tokens: Sequence[str]) -> list[str]: ...


class LexiconTagger:
    def __init__(self, lexicon: Mapping[str, str], suffix_rules=SUFFIX_RULES):
        self.lexicon = dict(lexicon)
        self.suffix_rules = tuple(suffix_rules)

    @classmethod
    def from_file(cls, path: str | Path) -> "LexiconTagger":
        lexicon = {}
        with Path(path).open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                word, tag = line.split("\t")
                lexicon.setdefault(word.lower(), tag)
        return cls(lexicon)

    @classmethod
    def bundled(cls) -> "LexiconTagger":
        return cls.from_file(data_path("tagger_lexicon.tsv"))

    def tag_token(self, token: str) -> str:
        if token in PLACEHOLDERS:
            return "NNP"
        if token in _PUNCT_TAGS:
            return _PUNCT_TAGS[token]
        if re.fullmatch(r"\d+", token):
            return "CD"
        if not re.search(r"[a-z]", token):
            return "SYM"
        tag = self.lexicon.get(token)
        if tag is not None:
            return tag
        for suffix, min_len, rule_tag in self.suffix_rules:
            if len(token) >= min_len and token.endswith(suffix):
                return rule_tag
        return "NN"

    def tag(self, tokens: Sequence[str]) -> list[str]:
        return [self.tag_token(t) for t in tokens]


_default_tagger: LexiconTagger | None = None


def tag_pos(tokens: Sequence[str], tagger: Tagger | None = None) -> list[str]:
    global _default_tagger
    if tagger is None:
        if _default_tagger is None:
            _default_tagger = LexiconTagger.bundled()
        tagger = _default_tagger
    return tagger.tag(tokens)
