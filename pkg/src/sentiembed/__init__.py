"""Sentiment-aware sentence embeddings.

Polarity-gated masked-word training plus quadruple contrastive learning, with
SgTS, linear-probe and few-shot evaluation.
"""

from .corpus import DatasetSplits, Example, Quadruple, SgTSPair, build_sgts_benchmark, sample_quadruples
from .encoder import EncoderConfig, SentenceEncoder, TransformerEncoder, load_checkpoint, save_checkpoint
from .evaluation import sgts_score, spearman
from .lexicon import Lexicon, Polarity, load_lexicon
from .masking import Tokenizer, Vocabulary
from .objectives import HyperParams, LossSelection

__version__ = "0.1.0"

__all__ = [
    "DatasetSplits", "Example", "Quadruple", "SgTSPair", "build_sgts_benchmark", "sample_quadruples",
    "EncoderConfig", "SentenceEncoder", "TransformerEncoder", "load_checkpoint", "save_checkpoint",
    "sgts_score", "spearman", "Lexicon", "Polarity", "load_lexicon", "Tokenizer", "Vocabulary",
    "HyperParams", "LossSelection",
]
