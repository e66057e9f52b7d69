"""
MFCC Frontend

Turns one second of 16 kHz mono audio into the 2-D MFCC stack the model
consumes:

    pad/truncate to 1 s -> 30 ms Hamming frames every 10 ms -> |rFFT|^2
    -> 40 mel triangles over [20 Hz, 4 kHz] -> log -> orthonormal DCT-II
    -> first n_mfcc coefficients

The band-pass is realized in the filterbank: every filter weight outside
[fmin, fmax] is exactly zero. Power-spectrum bins are floored at 1e-10
before the filterbank, so silent frames stay finite.

Output formats for featurize:
    binary: u32 T, u32 n_mfcc (little-endian), then T*n_mfcc f32 values
    csv:    one row per frame, columns c0..c{n_mfcc-1}
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct, rfft

from .errors import ConfigError, ShapeError
from .tensor import Tensor

logger = logging.getLogger(__name__)

POWER_FLOOR = 1e-10
_STACK_HEADER = struct.Struct('<II')


@dataclass(frozen=True)
class FrontendConfig:
    """
    MFCC pipeline settings. Defaults give a 98 x 40 stack per clip.

    Attributes:
        sample_rate: Hz
        window_ms, hop_ms: Frame length and shift
        fmin, fmax: Filterbank band edges (Hz)
        n_fft: FFT size (frames are zero-padded to it)
        n_mels: Mel filters
        n_mfcc: Kept cepstral coefficients
        clip_seconds: Clips are zero-padded or truncated to this length
    """
    sample_rate: int = 16000
    window_ms: float = 30.0
    hop_ms: float = 10.0
    fmin: float = 20.0
    fmax: float = 4000.0
    n_fft: int = 512
    n_mels: int = 40
    n_mfcc: int = 40
    clip_seconds: float = 1.0

    def __post_init__(self):
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise ConfigError(
                f"Need 0 <= fmin < fmax <= sample_rate/2, got fmin={self.fmin}, fmax={self.fmax}"
            )
        if not 0 < self.n_mfcc <= self.n_mels:
            raise ConfigError(f"Need 0 < n_mfcc <= n_mels, got {self.n_mfcc} > {self.n_mels}")
        if self.hop_length < 1 or self.window_length < 1:
            raise ConfigError("Window and hop must each cover at least one sample")
        if self.window_length > self.n_fft:
            raise ConfigError(f"Window of {self.window_length} samples exceeds n_fft={self.n_fft}")

    @property
    def window_length(self) -> int:
        return int(round(self.sample_rate * self.window_ms / 1000))

    @property
    def hop_length(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000))

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    @property
    def clip_samples(self) -> int:
        return int(round(self.sample_rate * self.clip_seconds))

    @property
    def n_frames(self) -> int:
        return frame_count(self.clip_samples, self.window_length, self.hop_length)


DEFAULT_FRONTEND = FrontendConfig()


def frame_count(length: int, window: int, hop: int) -> int:
    """floor((L - W) / H) + 1."""
    if length < window:
        raise ShapeError(f"Signal of {length} samples is shorter than one window ({window})")
    return (length - window) // hop + 1


def mel(f):
    """Hz -> mel: 2595 * log10(1 + f/700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


# =============================================================================
# PIPELINE STAGES
# =============================================================================

def frame_signal(signal, cfg: FrontendConfig = DEFAULT_FRONTEND) -> np.ndarray:
    """
    Hamming-windowed frames, shape (T, window_length).

    Also accepts a batch (N, L) and returns (N, T, window_length).
    """
    x = np.asarray(signal, dtype=np.float64)
    frame_count(x.shape[-1], cfg.window_length, cfg.hop_length)
    frames = sliding_window_view(x, cfg.window_length, axis=-1)[..., ::cfg.hop_length, :]
    return frames * np.hamming(cfg.window_length)


def power_spectrum(frame, n_fft: int) -> np.ndarray:
    """|DFT|^2 of the zero-padded frame(s), last axis -> n_fft/2 + 1 bins."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape[-1] > n_fft:
        raise ShapeError(f"Frame of {frame.shape[-1]} samples exceeds n_fft={n_fft}")
    return np.abs(rfft(frame, n=n_fft, axis=-1)) ** 2


def mel_filterbank(cfg: FrontendConfig = DEFAULT_FRONTEND) -> np.ndarray:
    """
    Triangular filters, shape (n_mels, n_fft/2 + 1).

    Edges are uniform on the mel scale between mel(fmin) and mel(fmax);
    triangles are evaluated at the bin centre frequencies k * sr / n_fft.
    """
    edges = mel_to_hz(np.linspace(mel(cfg.fmin), mel(cfg.fmax), cfg.n_mels + 2))
    freqs = np.arange(cfg.n_bins) * cfg.sample_rate / cfg.n_fft

    left, center, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - left) / (center - left)
    falling = (right - freqs[None, :]) / (right - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))

    empty = np.flatnonzero(fb.sum(axis=1) <= 0)
    if empty.size:
        raise ShapeError(
            f"Filters {empty.tolist()} cover no FFT bin: too many filters ({cfg.n_mels}) "
            f"for n_fft={cfg.n_fft} over [{cfg.fmin}, {cfg.fmax}] Hz"
        )
    return fb


def fit_length(signal, cfg: FrontendConfig = DEFAULT_FRONTEND) -> np.ndarray:
    """Zero-pad at the end or truncate to exactly one clip."""
    x = np.asarray(signal, dtype=np.float64)
    n = cfg.clip_samples
    if x.shape[-1] >= n:
        return x[..., :n]
    pad = [(0, 0)] * (x.ndim - 1) + [(0, n - x.shape[-1])]
    return np.pad(x, pad)


def _cepstra(power: np.ndarray, fb: np.ndarray, n_mfcc: int) -> np.ndarray:
    energies = np.maximum(power, POWER_FLOOR) @ fb.T
    return dct(np.log(energies), type=2, norm='ortho', axis=-1)[..., :n_mfcc]


@dataclass
class MfccStack:
    """
    Attributes:
        coefficients: (T, n_mfcc) matrix, one row per frame
        source_length: Samples in the clip before padding/truncation
    """
    coefficients: np.ndarray
    source_length: int

    @property
    def n_frames(self) -> int:
        return self.coefficients.shape[0]

    @property
    def n_mfcc(self) -> int:
        return self.coefficients.shape[1]

    def to_tensor(self) -> Tensor:
        """(1, 1, T, n_mfcc) model input."""
        return Tensor(self.coefficients[None, None, :, :])


def mfcc_stack(signal, cfg: FrontendConfig = DEFAULT_FRONTEND) -> MfccStack:
    """Full pipeline for one clip."""
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"Expected a 1-D signal, got shape {x.shape}")
    if x.size == 0:
        raise ShapeError("Cannot featurize an empty signal")
    frames = frame_signal(fit_length(x, cfg), cfg)
    coeffs = _cepstra(power_spectrum(frames, cfg.n_fft), mel_filterbank(cfg), cfg.n_mfcc)
    return MfccStack(coeffs, int(x.size))


def featurize_batch(signals: Sequence, cfg: FrontendConfig = DEFAULT_FRONTEND) -> np.ndarray:
    """
    Vectorized pipeline over clips.

    Returns:
        (N, 1, T, n_mfcc) model input
    """
    if len(signals) == 0:
        return np.zeros((0, 1, cfg.n_frames, cfg.n_mfcc))
    for i, s in enumerate(signals):
        if np.asarray(s).size == 0:
            raise ShapeError(f"Clip {i} is empty")
    batch = np.stack([fit_length(s, cfg) for s in signals])
    frames = frame_signal(batch, cfg)
    coeffs = _cepstra(power_spectrum(frames, cfg.n_fft), mel_filterbank(cfg), cfg.n_mfcc)
    return coeffs[:, None, :, :]


# =============================================================================
# OUTPUT FORMATS
# =============================================================================

def stack_to_bytes(stack: MfccStack) -> bytes:
    header = _STACK_HEADER.pack(stack.n_frames, stack.n_mfcc)
    return header + np.ascontiguousarray(stack.coefficients, dtype='<f4').tobytes()


def write_stack_binary(stack: MfccStack, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_bytes(stack_to_bytes(stack))
    return path


def read_stack_binary(path: Union[str, Path]) -> np.ndarray:
    """(T, n_mfcc) f32 matrix from a binary stack file."""
    data = Path(path).read_bytes()
    if len(data) < _STACK_HEADER.size:
        raise ShapeError(f"{path}: truncated stack header")
    t, n = _STACK_HEADER.unpack_from(data)
    expected = _STACK_HEADER.size + 4 * t * n
    if len(data) != expected:
        raise ShapeError(f"{path}: {len(data)} bytes, expected {expected} for {t}x{n}")
    return np.frombuffer(data, dtype='<f4', offset=_STACK_HEADER.size).reshape(t, n)


def write_stack_csv(stack: MfccStack, path: Union[str, Path]) -> Path:
    path = Path(path)
    df = pd.DataFrame(stack.coefficients, columns=[f"c{i}" for i in range(stack.n_mfcc)])
    df.to_csv(path, index=False, float_format='%.8g')
    return path
