"""Desk-scale commonsense validation and explanation.

From-scratch numpy stack: autodiff tensors, a subword tokenizer, a
bidirectional encoder classifier and causal decoder generator, multi-task
training with mixture-ratio scheduling, explanation injection, BLEU
scoring, and an explain-then-predict pipeline that feeds generated
explanations back into the classifier.
"""

from .bleu import BleuReport, bleu, sentence_bleu
from .data import (AssembledSequence, AuxExample, EncodedBatch,
                   ExplanationChoiceExample, GenerationExample,
                   InjectionPolicy, ParseError, SequenceLengthError,
                   ValidationExample, assemble_task_a, assemble_task_b,
                   assemble_task_c, convert_csv, load_dataset, pad_batch,
                   sample_injection)
from .generation import DecodeConfig, generate_explanation, lm_loss
from .model import (ClassifierModel, ConfigurationError, GeneratorModel,
                    ModelConfig, count_parameters)
from .optim import (Adamax, AdamaxState, ScheduleConfig, adamax_step,
                    clip_grad_norm, init_adamax, lr_at)
from .tensor import Tensor, ShapeError, backward, cross_entropy, matmul, softmax
from .tokenizer import Vocab, build_vocab, decode, encode
from .trainer import (EpochSchedule, TrainConfig, TrainTask, Trainer,
                      build_epoch_schedule, ensemble_predict,
                      evaluate_accuracy, predict_labels)

__version__ = "0.1.0"

__all__ = [
    "AdamaxState", "Adamax", "AssembledSequence", "AuxExample", "BleuReport",
    "ClassifierModel", "ConfigurationError", "DecodeConfig", "EncodedBatch",
    "EpochSchedule", "ExplanationChoiceExample", "GenerationExample",
    "GeneratorModel", "InjectionPolicy", "ModelConfig", "ParseError",
    "ScheduleConfig", "SequenceLengthError", "ShapeError", "Tensor",
    "TrainConfig", "TrainTask", "Trainer", "ValidationExample", "Vocab",
    "adamax_step", "assemble_task_a", "assemble_task_b", "assemble_task_c",
    "backward", "bleu", "build_epoch_schedule", "build_vocab",
    "clip_grad_norm", "convert_csv", "count_parameters", "cross_entropy",
    "decode", "encode", "ensemble_predict", "evaluate_accuracy",
    "generate_explanation", "init_adamax", "lm_loss", "load_dataset",
    "lr_at", "matmul", "pad_batch", "predict_labels", "sample_injection",
    "sentence_bleu", "softmax",
]
