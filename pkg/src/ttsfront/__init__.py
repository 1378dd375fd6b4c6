"""Multi-task TTS front-end: text normalization, POS tagging and homograph disambiguation."""

from .decoder import NormalizationPlan, beam_search, brute_force_decode, mask_logits, render
from .heads import POS_TAGS, HomographLexicon
from .metrics import EvalReport, hd_accuracy, wer
from .model import ModelConfig, MultiTaskModel, load_checkpoint, save_checkpoint
from .rules import RuleRegistry, default_registry
from .tokenizer import Token, TokenSequence, tokenize
from .training import TrainConfig, evaluate, prepare, train_loop

__version__ = "0.1.0"

__all__ = [
    "EvalReport",
    "HomographLexicon",
    "ModelConfig",
    "MultiTaskModel",
    "NormalizationPlan",
    "POS_TAGS",
    "RuleRegistry",
    "Token",
    "TokenSequence",
    "TrainConfig",
    "beam_search",
    "brute_force_decode",
    "default_registry",
    "evaluate",
    "hd_accuracy",
    "load_checkpoint",
    "mask_logits",
    "prepare",
    "render",
    "save_checkpoint",
    "tokenize",
    "train_loop",
    "wer",
]
