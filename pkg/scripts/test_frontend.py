#!/usr/bin/env python3
"""
Test the MFCC frontend.

Verifies:
1. One second at 16 kHz gives a 98 x 40 stack
2. Power spectrum equals a naive DFT; filterbank is zero outside [20 Hz, 4 kHz]
3. Silence produces the floored closed-form coefficients
4. The full pipeline matches a straight-line reference within 1e-6; a gain
   change only shifts c0, by 2 ln(gain) sqrt(n_mels)
5. Padding, truncation and the batch path agree with the single-clip path
6. Binary and CSV outputs
"""

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pandas as pd
import pytest

from src.errors import ConfigError, ShapeError
from src.frontend import (
    DEFAULT_FRONTEND,
    FrontendConfig,
    featurize_batch,
    frame_count,
    frame_signal,
    mel,
    mel_filterbank,
    mel_to_hz,
    mfcc_stack,
    power_spectrum,
    read_stack_binary,
    write_stack_binary,
    write_stack_csv,
)
from src.tensor import Rng


def speech_like(n: int = 16000, seed: int = 0) -> np.ndarray:
    t = np.arange(n) / 16000
    tones = 0.2 * np.sin(2 * np.pi * 440 * t) + 0.1 * np.sin(2 * np.pi * 1250 * t + 0.3)
    return tones + Rng(seed).normal(0, 0.02, n)


# =============================================================================
# REFERENCE
# =============================================================================

def reference_mfcc(signal: np.ndarray) -> np.ndarray:
    """Loop-by-loop MFCC with the default settings."""
    x = np.zeros(16000)
    x[:min(16000, signal.size)] = signal[:16000]
    W, H, N_FFT, N_MELS = 480, 160, 512, 40

    window = np.array([0.54 - 0.46 * np.cos(2 * np.pi * n / (W - 1)) for n in range(W)])

    lo, hi = 2595 * np.log10(1 + 20 / 700), 2595 * np.log10(1 + 4000 / 700)
    edges = [700 * (10 ** ((lo + (hi - lo) * i / (N_MELS + 1)) / 2595) - 1) for i in range(N_MELS + 2)]
    fb = np.zeros((N_MELS, N_FFT // 2 + 1))
    for m in range(N_MELS):
        left, center, right = edges[m], edges[m + 1], edges[m + 2]
        for k in range(N_FFT // 2 + 1):
            f = k * 16000 / N_FFT
            if left < f <= center:
                fb[m, k] = (f - left) / (center - left)
            elif center < f < right:
                fb[m, k] = (right - f) / (right - center)

    rows = []
    for t in range((16000 - W) // H + 1):
        frame = x[t * H:t * H + W] * window
        power = np.abs(np.fft.rfft(frame, N_FFT)) ** 2
        logs = np.log(np.maximum(power, 1e-10) @ fb.T)
        coeffs = []
        for k in range(N_MELS):
            scale = np.sqrt(1 / N_MELS) if k == 0 else np.sqrt(2 / N_MELS)
            coeffs.append(scale * sum(logs[n] * np.cos(np.pi * k * (2 * n + 1) / (2 * N_MELS))
                                      for n in range(N_MELS)))
        rows.append(coeffs)
    return np.array(rows)


# =============================================================================
# SHAPES AND STAGES
# =============================================================================

def test_default_stack_shape():
    assert DEFAULT_FRONTEND.n_frames == 98
    assert frame_count(16000, 480, 160) == 98
    stack = mfcc_stack(speech_like())
    assert stack.coefficients.shape == (98, 40)
    assert stack.to_tensor().shape == (1, 1, 98, 40)
    assert np.all(np.isfinite(stack.coefficients))


def test_power_spectrum_matches_naive_dft():
    frame = frame_signal(speech_like())[17]
    n = np.arange(frame.size)
    naive = np.array([
        abs(np.sum(frame * np.exp(-2j * np.pi * k * n / 512))) ** 2 for k in range(257)
    ])
    np.testing.assert_allclose(power_spectrum(frame, 512), naive, rtol=1e-9, atol=1e-9)

    with pytest.raises(ShapeError):
        power_spectrum(np.zeros(600), 512)


def test_filterbank_band_limits():
    fb = mel_filterbank()
    freqs = np.arange(257) * 16000 / 512
    assert fb.shape == (40, 257)
    assert np.all(fb[:, (freqs < 20) | (freqs > 4000)] == 0.0)
    assert np.all(fb >= 0) and fb.max() <= 1.0
    assert np.all(fb.sum(axis=1) > 0)


def test_mel_scale():
    assert mel(0) == 0.0
    assert mel(700) == pytest.approx(2595 * np.log10(2))
    np.testing.assert_allclose(mel_to_hz(mel([20.0, 1000.0, 4000.0])), [20.0, 1000.0, 4000.0])


def test_silence_is_floored():
    stack = mfcc_stack(np.zeros(16000))
    row_sums = mel_filterbank().sum(axis=1)
    c0 = np.sqrt(1 / 40) * np.sum(np.log(1e-10 * row_sums))
    assert np.all(np.isfinite(stack.coefficients))
    np.testing.assert_allclose(stack.coefficients[:, 0], c0, rtol=1e-12)
    # every frame is identical
    assert np.all(stack.coefficients == stack.coefficients[0])


def test_matches_reference_pipeline():
    print("\n" + "=" * 60)
    print("TEST: MFCC vs straight-line reference")
    print("=" * 60)

    x = speech_like(seed=3)
    got = mfcc_stack(x).coefficients
    want = reference_mfcc(x)
    print(f"max |diff| = {np.max(np.abs(got - want)):.3g}")
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-6)


@pytest.mark.parametrize('c', [0.25, 3.0])
def test_gain_only_moves_c0(c):
    x = speech_like(seed=2)
    base = mfcc_stack(x).coefficients
    scaled = mfcc_stack(c * x).coefficients
    np.testing.assert_allclose(scaled[:, 1:], base[:, 1:], rtol=0, atol=1e-9)
    np.testing.assert_allclose(scaled[:, 0] - base[:, 0], 2 * np.log(c) * np.sqrt(40), rtol=0, atol=1e-9)


# =============================================================================
# LENGTH HANDLING
# =============================================================================

def test_short_clip_is_zero_padded():
    short = speech_like(8000)
    padded = np.concatenate([short, np.zeros(8000)])
    stack = mfcc_stack(short)
    assert stack.source_length == 8000
    np.testing.assert_array_equal(stack.coefficients, mfcc_stack(padded).coefficients)


def test_long_clip_is_truncated():
    long = speech_like(20000)
    np.testing.assert_array_equal(mfcc_stack(long).coefficients, mfcc_stack(long[:16000]).coefficients)


def test_invalid_signals():
    with pytest.raises(ShapeError):
        mfcc_stack(np.zeros(0))
    with pytest.raises(ShapeError):
        mfcc_stack(np.zeros((2, 16000)))
    with pytest.raises(ShapeError):
        featurize_batch([np.zeros(100), np.zeros(0)])


def test_config_validation():
    with pytest.raises(ConfigError):
        FrontendConfig(fmax=9000.0)
    with pytest.raises(ConfigError):
        FrontendConfig(fmin=4000.0, fmax=20.0)
    with pytest.raises(ConfigError):
        FrontendConfig(n_mfcc=41)
    with pytest.raises(ConfigError):
        FrontendConfig(window_ms=40.0)
    with pytest.raises(ShapeError):
        mel_filterbank(FrontendConfig(n_mels=200))


def test_batch_matches_single():
    clips = [speech_like(16000, 1), speech_like(12000, 2), speech_like(17000, 3)]
    batch = featurize_batch(clips)
    assert batch.shape == (3, 1, 98, 40)
    for i, clip in enumerate(clips):
        np.testing.assert_allclose(batch[i, 0], mfcc_stack(clip).coefficients, rtol=0, atol=1e-10)
    assert featurize_batch([]).shape == (0, 1, 98, 40)


# =============================================================================
# OUTPUT FORMATS
# =============================================================================

def test_binary_output(tmp_path):
    stack = mfcc_stack(speech_like())
    path = write_stack_binary(stack, tmp_path / 'clip.mfcc')
    assert path.stat().st_size == 8 + 4 * 98 * 40
    np.testing.assert_array_equal(read_stack_binary(path), stack.coefficients.astype(np.float32))

    (tmp_path / 'short.mfcc').write_bytes(path.read_bytes()[:100])
    with pytest.raises(ShapeError):
        read_stack_binary(tmp_path / 'short.mfcc')


def test_csv_output(tmp_path):
    stack = mfcc_stack(speech_like())
    df = pd.read_csv(write_stack_csv(stack, tmp_path / 'clip.csv'))
    assert list(df.columns) == [f"c{i}" for i in range(40)]
    assert len(df) == 98
    np.testing.assert_allclose(df.to_numpy(), stack.coefficients, rtol=1e-7, atol=1e-6)


if __name__ == '__main__':
    sys.exit(pytest.main([__file__, '-v']))
