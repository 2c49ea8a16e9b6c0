from .extract import (
    EMOTION_LABELS,
    EmotionLexicon,
    IdfTable,
    KeywordExtractor,
    KeywordSet,
    bottom_k_idf,
    bundled_stopwords,
    compute_idf,
    emotion_keywords,
    event_keywords,
    extract_keywords,
    fit_banned_stems,
    load_wordlist,
    verb_tokens,
)
from .porter import porter_stem
from .tagger import SUFFIX_RULES, VERB_TAGS, LexiconTagger, Tagger, tag_pos

__all__ = [
    "EMOTION_LABELS", "EmotionLexicon", "IdfTable", "KeywordExtractor", "KeywordSet",
    "LexiconTagger", "SUFFIX_RULES", "Tagger", "VERB_TAGS", "bottom_k_idf", "bundled_stopwords",
    "compute_idf", "emotion_keywords", "event_keywords", "extract_keywords", "fit_banned_stems",
    "load_wordlist", "porter_stem", "tag_pos", "verb_tokens",
]
