from .batching import (
    CommonNoun,
    Corpus,
    GenerationConfig,
    RandomSameOrientation,
    TrainingExample,
    build_batch,
    generate_examples,
)
from .config import Config
from .encoders import EncoderPair, ToyImageEncoder, ToyTextEncoder
from .evaluation import Report, evaluate_suite, recall_at_k
from .losses import EmbeddingBatch, LossWeights, clic_total
from .metadata import ConcatOrder, FreezeMode, Objective, UposTag
from .text import make_hard_negative, make_positives
from .toyworld import make_toy_world, oracle_encoders
from .training import TrainConfig, ablation, toy_config, train

__all__ = [
    "CommonNoun",
    "ConcatOrder",
    "Config",
    "Corpus",
    "EmbeddingBatch",
    "EncoderPair",
    "FreezeMode",
    "GenerationConfig",
    "LossWeights",
    "Objective",
    "RandomSameOrientation",
    "Report",
    "ToyImageEncoder",
    "ToyTextEncoder",
    "TrainConfig",
    "TrainingExample",
    "UposTag",
    "ablation",
    "build_batch",
    "clic_total",
    "evaluate_suite",
    "generate_examples",
    "make_hard_negative",
    "make_positives",
    "make_toy_world",
    "oracle_encoders",
    "recall_at_k",
    "toy_config",
    "train",
]
