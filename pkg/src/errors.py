"""
TinySpeech Engine Errors

One hierarchy for every failure the engine reports. Each class also derives
from the matching builtin so callers catching ValueError / OSError keep working.

The CLI maps these to exit codes:
    - ValueError family -> 1 (validation)
    - OSError family    -> 2 (I/O)
"""

from typing import Optional


class TinySpeechError(Exception):
    """Base class for all engine errors."""


class ConfigError(TinySpeechError, ValueError):
    """Invalid architecture or run configuration."""


class MicroOpsViolation(ConfigError):
    """A layer uses an op outside the microcontroller op set."""

    def __init__(self, message: str, layer_index: Optional[int] = None):
        super().__init__(message)
        self.layer_index = layer_index


class ShapeError(TinySpeechError, ValueError):
    """Shape, broadcast, element-count or geometry mismatch."""


class CacheError(TinySpeechError, ValueError):
    """Backward called without a matching forward cache."""


class ModelFormatError(TinySpeechError, ValueError):
    """Model file is not a well-formed TSPN file."""


class VersionMismatchError(ModelFormatError):
    """Model file was written with an unsupported format version."""


class ChecksumError(ModelFormatError):
    """Model file CRC32 does not match its contents."""


class WavFormatError(TinySpeechError, ValueError):
    """WAV payload is not 16 kHz mono PCM-16 or is damaged."""


class DatasetError(TinySpeechError, ValueError):
    """Dataset directory or split cannot be used."""


class QuantizationError(TinySpeechError, ValueError):
    """Tensor cannot be quantized at the requested width."""


class TrainingError(TinySpeechError, RuntimeError):
    """Training diverged (non-finite loss)."""
