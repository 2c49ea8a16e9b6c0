"""Style-guided story generation at desk scale: annotate, train, sample, evaluate."""
__version__ = "0.1.0"

from .corpus import Story, StyleToken, Vocabulary, load_corpus, tokenize
from .annotator import AnnotatedStory, StyleAnnotator, fit_annotator, normalize_count
from .model import ModelConfig, StyleGuidedStoryModel, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, train
from .sampler import SamplerConfig, generate

__all__ = [
    "AnnotatedStory", "ModelConfig", "SamplerConfig", "Story", "StyleAnnotator", "StyleGuidedStoryModel",
    "StyleToken", "TrainConfig", "Vocabulary", "fit_annotator", "generate", "load_checkpoint",
    "load_corpus", "normalize_count", "save_checkpoint", "tokenize", "train", "__version__",
]
