"""From-scratch scene-text recognition: TPS rectification, ResNeXt-style features, attention decoding."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import MixSpec, Vocabulary, WordSample, load_annotations, synth_corpus
from .estimator import TextRecognizer
from .evaluate import EvalProtocol, EvalReport, benchmark_protocol, evaluate, filter_dataset, word_accuracy
from .model import ModelConfig, TextRecognitionModel, preset_config
from .trainer import NonFiniteLoss, TrainConfig, Trainer, train

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "EvalProtocol",
    "EvalReport",
    "MixSpec",
    "ModelConfig",
    "NonFiniteLoss",
    "TextRecognitionModel",
    "TextRecognizer",
    "TrainConfig",
    "Trainer",
    "Vocabulary",
    "WordSample",
    "benchmark_protocol",
    "evaluate",
    "filter_dataset",
    "load_annotations",
    "load_checkpoint",
    "preset_config",
    "save_checkpoint",
    "synth_corpus",
    "train",
    "word_accuracy",
]
