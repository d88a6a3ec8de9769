"""similepolish: locate where a simile belongs in plain text, then generate
a location-conditioned simile there."""

from .autodiff import Tensor, backward, adam_step, AdamState
from .corpus import (
    CorpusRecord,
    PatternLexicon,
    RawDocument,
    Vocabulary,
    build_vocab,
    downsample,
    extract,
    generate_synthetic,
    split,
)
from .nn import ModelConfig, SpecialTokens, select_insertion
from .model import (
    BeamHypothesis,
    LocateGenModel,
    PolishResult,
    SimileSample,
    TrainConfig,
    train,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .metrics import MetricsReport, bleu_n, distinct, embedding_similarity, evaluate

__version__ = "0.1.0"
