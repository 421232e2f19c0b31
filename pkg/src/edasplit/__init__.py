"""Tonic/phasic decomposition of skin-conductance frames and method comparison.

Three decomposition families share one feature pipeline: robust linear
detrending, sparse deconvolution against a Bateman-kernel dictionary, and a
pooled-SCL autocorrelation transformer ("Feel Transformer").
"""
from .decomposition import Decomposition
from .errors import (CheckpointError, ConfigurationError, DataError, EdaError, NumericError,
                     ReportError, SpecError, TrainingDiverged)
from .signals import FRAME_FS, FRAME_LEN, EdaSignal, FilterSpec, Frame

__all__ = [
    "Decomposition", "EdaSignal", "Frame", "FilterSpec", "FRAME_FS", "FRAME_LEN",
    "EdaError", "ConfigurationError", "DataError", "SpecError", "NumericError",
    "TrainingDiverged", "CheckpointError", "ReportError",
]
__version__ = "0.1.0"
