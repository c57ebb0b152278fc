"""Adapter-tuning of small Vision Transformers with inverse online distillation.

A smaller teacher and a larger student, both frozen backbones with trainable
adapters, are trained jointly; the student is distilled from the teacher's
logits and deployed alone.
"""
from .errors import (
    ConfigError,
    DataError,
    DimensionError,
    IdatError,
    LoadError,
    NumericError,
    UsageError,
)
from .tensor import Tape, Tensor, backward

__version__ = "0.1.0"
