#!/usr/bin/env python3
"""
Test WAV ingestion, splits, manifests and the synthetic dataset.

Verifies:
1. PCM-16 mono WAV round trip; malformed or unsupported files are rejected
2. Split assignment is deterministic and groups a speaker's clips
3. scan_dataset label ordering, unknown mapping and error cases
4. Synthetic clips are reproducible per seed and featurize to 98 x 40; a logistic
   model on mean MFCCs separates two synthetic classes
5. Background noise mixing hits the requested SNR
"""

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pytest
from scipy.special import expit

from scripts.testing_utils import pcm16, wav_payload, write_tree
from src.dataset import (
    UNKNOWN_LABEL,
    AudioClip,
    export_clips,
    load_background_noise,
    load_manifest,
    load_splits,
    mix_background,
    parse_wav,
    read_clip,
    save_manifest,
    scan_dataset,
    split_assign,
    synth_dataset,
    to_pcm16,
    write_wav,
)
from src.errors import DatasetError, WavFormatError
from src.frontend import featurize_batch
from src.tensor import Rng


# =============================================================================
# WAV
# =============================================================================

def test_wav_round_trip():
    samples = Rng(0).normal(0, 0.2, 4000).clip(-1, 1)
    clip = parse_wav(write_wav(samples))
    assert clip.sample_rate == 16000
    np.testing.assert_array_equal(clip.samples, to_pcm16(samples) / 32768.0)
    assert clip.duration == 0.25


def test_hand_written_wav():
    clip = parse_wav(wav_payload(pcm16([0.0, 0.5, -0.5, -1.0])))
    np.testing.assert_array_equal(clip.samples, [0.0, 0.5, -0.5, -1.0])


@pytest.mark.parametrize('payload', [
    wav_payload(pcm16(np.zeros(100)), channels=2),
    wav_payload(np.zeros(100, dtype=np.uint8).tobytes(), bits=8),
    wav_payload(np.zeros(100, dtype='<f4').tobytes(), bits=32, audio_format=3),
    wav_payload(pcm16(np.zeros(100)), data_size=400),
    b'RIFX' + b'\x00' * 40,
    b'',
], ids=['stereo', '8-bit', 'float', 'truncated', 'not-riff', 'empty'])
def test_malformed_wavs_rejected(payload):
    with pytest.raises(WavFormatError):
        parse_wav(payload)


def test_wrong_sample_rate(tmp_path):
    path = tmp_path / 'slow.wav'
    path.write_bytes(wav_payload(pcm16(np.zeros(800)), sample_rate=8000))
    assert read_clip(path).sample_rate == 8000
    with pytest.raises(WavFormatError, match='8000'):
        read_clip(path, sample_rate=16000)


def test_clip_range_checked():
    with pytest.raises(WavFormatError):
        AudioClip(np.array([0.0, 1.5]))


# =============================================================================
# SPLITS
# =============================================================================

def test_split_is_deterministic_and_grouped():
    assert split_assign('yes/0a2b4c6d_nohash_0.wav') == split_assign('yes/0a2b4c6d_nohash_0.wav')
    for speaker in ['0a2b4c6d', 'ffee1234', 'spk0042', 'c0ffee00']:
        splits = {split_assign(f"{label}/{speaker}_nohash_{i}.wav")
                  for label in ['yes', 'no', 'up'] for i in range(4)}
        assert len(splits) == 1


def test_split_distribution():
    rng = Rng(3)
    names = [f"{int(rng.integers(0, 2 ** 31)):08x}_nohash_0.wav" for _ in range(3000)]
    splits = [split_assign(n, 10.0, 10.0) for n in names]
    for name in ['val', 'test']:
        frac = splits.count(name) / len(splits)
        assert 0.07 < frac < 0.13, f"{name}: {frac:.3f}"

    assert all(split_assign(n, 0.0, 0.0) == 'train' for n in names[:50])
    with pytest.raises(DatasetError):
        split_assign('a.wav', 60.0, 40.0)


# =============================================================================
# SCANNING
# =============================================================================

@pytest.fixture
def tree(tmp_path):
    return write_tree(tmp_path / 'speech', {
        'yes': ['aaaa0001_nohash_0.wav', 'aaaa0002_nohash_0.wav'],
        'no': ['bbbb0001_nohash_0.wav', 'bbbb0001_nohash_1.wav'],
        'up': ['cccc0001_nohash_0.wav'],
        '_background_noise_': ['white_noise.wav'],
    })


def test_scan_sorted_labels(tree):
    manifest = scan_dataset(tree)
    assert manifest.labels == ['no', 'up', 'yes']
    assert len(manifest.entries) == 5
    assert all('_background_noise_' not in e.path for e in manifest.entries)
    assert manifest.entries[0].path == 'no/bbbb0001_nohash_0.wav'
    assert manifest.entries[0].split == manifest.entries[1].split
    assert sum(manifest.counts().values()) == 5


def test_scan_wanted_labels_and_unknown(tree):
    manifest = scan_dataset(tree, wanted_labels=['yes', 'no'])
    assert manifest.labels == ['yes', 'no']
    assert {e.label for e in manifest.entries} == {0, 1}
    assert len(manifest.entries) == 4

    mapped = scan_dataset(tree, wanted_labels=['yes', 'no'], map_unknown=True)
    assert mapped.labels == ['yes', 'no', UNKNOWN_LABEL]
    unknown = [e for e in mapped.entries if e.label == 2]
    assert [e.path for e in unknown] == ['up/cccc0001_nohash_0.wav']


def test_scan_errors(tmp_path, tree):
    with pytest.raises(DatasetError):
        scan_dataset(tmp_path / 'missing')
    with pytest.raises(DatasetError):
        scan_dataset(tree, wanted_labels=['yes', 'left'])
    (tmp_path / 'empty' / 'yes').mkdir(parents=True)
    with pytest.raises(DatasetError):
        scan_dataset(tmp_path / 'empty')


def test_manifest_round_trip(tmp_path, tree):
    manifest = scan_dataset(tree)
    path = save_manifest(manifest, tmp_path / 'manifest.json')
    again = load_manifest(path, root=tree)
    assert again.labels == manifest.labels
    assert again.entries == manifest.entries
    assert again.root == tree

    (tmp_path / 'broken.json').write_text('{"labels": ["a"]}')
    with pytest.raises(DatasetError):
        load_manifest(tmp_path / 'broken.json')


def test_background_noise(tree):
    noise = load_background_noise(tree)
    assert len(noise) == 1 and noise[0].sample_rate == 16000
    assert load_background_noise(tree / 'yes') == []


def test_mix_background_snr():
    t = np.arange(16000) / 16000
    clip = AudioClip(0.3 * np.sin(2 * np.pi * 500 * t))
    noise = [AudioClip(Rng(5).normal(0, 0.05, 8000))]
    mixed = mix_background(clip, noise, snr_db=10.0, rng=Rng(1))

    added = mixed.samples - clip.samples
    snr = 10 * np.log10(np.mean(clip.samples ** 2) / np.mean(added ** 2))
    assert snr == pytest.approx(10.0, abs=1e-6)

    assert mix_background(clip, [], 10.0, Rng(1)) is clip
    silent = AudioClip(np.zeros(100))
    assert mix_background(silent, noise, 10.0, Rng(1)) is silent


# =============================================================================
# SYNTHETIC DATA
# =============================================================================

def test_synth_is_reproducible():
    a = synth_dataset(4, 3, seed=7)
    b = synth_dataset(4, 3, seed=7)
    c = synth_dataset(4, 3, seed=8)
    assert a.labels == ['tone400', 'tone700', 'tone1000']
    assert [x.path for x in a.clips] == [x.path for x in b.clips]
    assert all(np.array_equal(x.clip.samples, y.clip.samples) for x, y in zip(a.clips, b.clips))
    assert not np.array_equal(a.clips[0].clip.samples, c.clips[0].clip.samples)
    assert a.clips[5].path == 'synth/tone700/spk0005_nohash_0.wav'
    assert all(x.clip.samples.size == 16000 for x in a.clips)

    with pytest.raises(DatasetError):
        synth_dataset(4, 1, seed=0)


def test_synth_splits_featurize():
    clips = synth_dataset(20, 3, seed=1)
    manifest = clips.to_manifest()
    splits = load_splits(manifest, clips=clips.by_path())
    total = len(splits.train) + len(splits.val) + len(splits.test)
    assert total == 60
    assert splits.train.x.shape[1:] == (1, 98, 40)
    assert splits.train.y.dtype == np.int64
    assert set(splits.train.y.tolist()) <= {0, 1, 2}
    with pytest.raises(DatasetError):
        splits.split('holdout')


def test_synth_classes_are_linearly_separable():
    clips = synth_dataset(40, 2, seed=5)
    x = featurize_batch([c.clip.samples for c in clips.clips])[:, 0].mean(axis=1)
    x = (x - x.mean(axis=0)) / x.std(axis=0)
    y = np.array([c.label for c in clips.clips], dtype=np.float64)
    fit, held = np.arange(len(y)) % 2 == 0, np.arange(len(y)) % 2 == 1

    # 40 weights, no bias: the standardized classes are balanced
    w = np.zeros(x.shape[1])
    for _ in range(300):
        p = expit(x[fit] @ w)
        w -= 0.5 * x[fit].T @ (p - y[fit]) / fit.sum()
    accuracy = np.mean((x[held] @ w > 0) == (y[held] == 1))
    print(f"held-out accuracy {accuracy:.3f}")
    assert w.size == 40
    assert accuracy >= 0.95


def test_export_then_scan(tmp_path):
    clips = synth_dataset(5, 3, seed=2)
    root = export_clips(clips, tmp_path / 'export')
    manifest = scan_dataset(root, wanted_labels=clips.labels)
    assert manifest.labels == clips.labels

    expected = {(c.path.split('/', 1)[1], c.label) for c in clips.clips}
    assert {(e.path, e.label) for e in manifest.entries} == expected
    splits_mem = {c.path.split('/', 1)[1]: s.split for c, s in zip(clips.clips, clips.to_manifest().entries)}
    assert all(splits_mem[e.path] == e.split for e in manifest.entries)

    on_disk = load_splits(manifest)
    in_memory = load_splits(clips.to_manifest(), clips=clips.by_path())
    assert len(on_disk.train) == len(in_memory.train)


if __name__ == '__main__':
    sys.exit(pytest.main([__file__, '-v']))
