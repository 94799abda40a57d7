"""Blind separation of underwater acoustic mixtures by binary time-frequency masking.

Two feature paths feed the same weighted K-means and masking back end:
hand-crafted multi-sensor features, or embeddings from a recurrent network
trained with an affinity loss.
"""

__version__ = "0.1.0"

from .errors import (ConfigurationError, DegenerateInputError, FormatError, ParameterError,
                     TrainingDivergedError, UasepError, UndefinedMetricError)
from .signals import TimeSignal
from .tfr import Spectrogram, StftConfig, istft, stft

__all__ = [
    "ConfigurationError", "DegenerateInputError", "FormatError", "ParameterError",
    "TrainingDivergedError", "UasepError", "UndefinedMetricError",
    "Spectrogram", "StftConfig", "TimeSignal", "istft", "stft", "__version__",
]
