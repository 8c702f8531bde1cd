"""Mixture-of-generators sequence model: shared recurrent encoder, intent
specialized expert decoders, and a chair decoder that mixes expert token
distributions with retrospective and prospective pooling, trained with a
combined global and local scheme on a synthetic intent-partitioned corpus."""

from .chair import GenerationResult, MixtureFlags
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .corpus import DialogueContext, ToyGrammar, Vocab, load_corpus, write_corpus
from .errors import ConfigError, NumericsError
from .evaluate import expert_slice_ppl, score_split
from .learning import (Adam, IntentPartition, LossConfig, OptimizerConfig,
                       combined_loss, train)
from .metrics import MetricsReport, corpus_bleu, evaluate_records, perplexity, score
from .model import ModelConfig, MoGNet
from .tensor import Tape, Tensor, backward, cross_entropy, gradient_check, softmax

__all__ = [
    "Adam",
    "ConfigError",
    "DialogueContext",
    "GenerationResult",
    "IntentPartition",
    "LossConfig",
    "MetricsReport",
    "MixtureFlags",
    "ModelConfig",
    "MoGNet",
    "NumericsError",
    "OptimizerConfig",
    "RunConfig",
    "Tape",
    "Tensor",
    "ToyGrammar",
    "Vocab",
    "backward",
    "combined_loss",
    "corpus_bleu",
    "cross_entropy",
    "evaluate_records",
    "expert_slice_ppl",
    "gradient_check",
    "load_checkpoint",
    "load_corpus",
    "perplexity",
    "save_checkpoint",
    "score",
    "score_split",
    "softmax",
    "train",
    "write_corpus",
]
