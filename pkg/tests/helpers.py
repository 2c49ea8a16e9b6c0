from stylestory.annotator import annotate_corpus, fit_annotator
from stylestory.corpus import NameLexicon, SplitConfig, build_vocab, delexicalize, split_corpus
from stylestory.keywords import EmotionLexicon, KeywordExtractor, LexiconTagger, bundled_stopwords
from stylestory.model import ModelConfig
from stylestory.synth import SynthConfig, generate_corpus
from stylestory.trainer import examples_from_annotated

TINY = dict(d_model=16, n_heads=2, d_r=8, d_ff=32, n_layers_enc=1, n_layers_dec=1)


def synth_setup(n=60, seed=0, **synth_kw):
    cfg = SynthConfig(n_stories=n, seed=seed, **synth_kw)
    names = NameLexicon.bundled()
    stories = [delexicalize(s.story, names) for s in generate_corpus(cfg)]
    ex = KeywordExtractor(EmotionLexicon(cfg.emo_vocab), LexiconTagger.bundled(), bundled_stopwords())
    train, valid, test = split_corpus(stories, SplitConfig(seed=seed))
    annotator, _ = fit_annotator(train, ex)
    result = annotate_corpus({"train": train, "valid": valid, "test": test}, annotator)
    vocab = build_vocab(train)
    return result, annotator, vocab


def tiny_examples(n=60, seed=0, **model_kw):
    result, annotator, vocab = synth_setup(n, seed)
    mc = ModelConfig(vocab_size=len(vocab), **{**TINY, **model_kw})
    return examples_from_annotated(result.stories["train"], vocab, mc.max_len), mc, vocab
