"""MBConv image classifier with a from-scratch autodiff engine, optimizers and evaluation tools."""

from .errors import (CheckpointError, ConfigError, DataError, DecodeError, DeepSeqCocoError, NumericError,
                     ShapeError, SpecError, UsageError)
from .nn import NetworkSpec, MBConvSpec, build_network, count_params, preset
from .tensor import Tape, Tensor, backward, precision

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "ConfigError", "DataError", "DecodeError", "DeepSeqCocoError", "NumericError",
    "ShapeError", "SpecError", "UsageError", "NetworkSpec", "MBConvSpec", "build_network", "count_params",
    "preset", "Tape", "Tensor", "backward", "precision",
]
