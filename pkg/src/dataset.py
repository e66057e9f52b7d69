"""
Dataset

Speech-Commands-layout ingestion (one subdirectory of 16 kHz mono PCM-16
WAV files per label), deterministic speaker-hash splits, and a synthetic
tone-burst dataset for desk-scale runs.

Split rule: drop everything from "_nohash_" on in the file name, SHA-1 the
rest, map the hash onto [0, 100) and compare it with the cumulative
validation/test percentages. A speaker's clips always land in the same split,
and the split of a file never depends on which other files exist.

Manifest JSON:
    {"labels": [...], "entries": [{"path", "label", "split"}, ...]}
"""

import hashlib
import io
import json
import logging
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.io import wavfile

from .errors import DatasetError, WavFormatError
from .frontend import DEFAULT_FRONTEND, FrontendConfig, featurize_batch
from .tensor import Rng

logger = logging.getLogger(__name__)

BACKGROUND_NOISE_DIR = '_background_noise_'
UNKNOWN_LABEL = '_unknown_'
SPLITS = ('train', 'val', 'test')

# Same constant as the benchmark's reference split script
MAX_NUM_WAVS_PER_CLASS = 2 ** 27 - 1

WAVE_FORMAT_PCM = 1


# =============================================================================
# WAV
# =============================================================================

@dataclass
class AudioClip:
    """
    Attributes:
        samples: Real samples in [-1, 1]
        sample_rate: Hz
    """
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.size and np.max(np.abs(self.samples)) > 1.0:
            raise WavFormatError("Clip samples must lie in [-1, 1]")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def _check_riff(data: bytes) -> None:
    """Walk the RIFF chunks: PCM-16 mono fmt chunk and a complete data chunk."""
    if len(data) < 12 or data[:4] != b'RIFF' or data[8:12] != b'WAVE':
        raise WavFormatError("Not a RIFF/WAVE file")

    fmt = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id, size = struct.unpack_from('<4sI', data, pos)
        body = pos + 8
        if chunk_id == b'fmt ':
            if size < 16 or body + 16 > len(data):
                raise WavFormatError("Malformed fmt chunk")
            fmt = struct.unpack_from('<HHIIHH', data, body)
        elif chunk_id == b'data':
            if fmt is None:
                raise WavFormatError("data chunk before fmt chunk")
            if body + size > len(data):
                raise WavFormatError(
                    f"Truncated data chunk: header declares {size} bytes, {len(data) - body} present"
                )
            break
        pos = body + size + (size & 1)
    else:
        raise WavFormatError("No data chunk")

    audio_format, channels, _, _, _, bits = fmt
    if audio_format != WAVE_FORMAT_PCM:
        raise WavFormatError(f"Unsupported WAV encoding {audio_format} (need PCM)")
    if channels != 1:
        raise WavFormatError(f"Expected mono audio, got {channels} channels")
    if bits != 16:
        raise WavFormatError(f"Expected 16-bit samples, got {bits}-bit")


def parse_wav(data: bytes) -> AudioClip:
    """Decode PCM-16 mono WAV bytes; sample i = int16 / 32768."""
    _check_riff(data)
    try:
        rate, pcm = wavfile.read(io.BytesIO(data))
    except ValueError as e:
        raise WavFormatError(f"Malformed WAV: {e}") from e
    if pcm.dtype != np.int16 or pcm.ndim != 1:
        raise WavFormatError(f"Expected mono int16 samples, got {pcm.dtype} {pcm.shape}")
    return AudioClip(pcm.astype(np.float64) / 32768.0, int(rate))


def to_pcm16(samples) -> np.ndarray:
    x = np.asarray(samples)
    if x.dtype == np.int16:
        return x
    return np.clip(np.round(np.asarray(x, dtype=np.float64) * 32768.0), -32768, 32767).astype(np.int16)


def write_wav(samples, sample_rate: int = 16000) -> bytes:
    """PCM-16 mono WAV bytes; float samples are scaled by 32768 and clipped."""
    buf = io.BytesIO()
    wavfile.write(buf, sample_rate, to_pcm16(samples))
    return buf.getvalue()


def read_clip(path: Union[str, Path], sample_rate: Optional[int] = None) -> AudioClip:
    """Read a WAV file; rejects files at another sample rate (no resampling)."""
    path = Path(path)
    try:
        clip = parse_wav(path.read_bytes())
    except WavFormatError as e:
        raise WavFormatError(f"{path}: {e}") from e
    if sample_rate is not None and clip.sample_rate != sample_rate:
        raise WavFormatError(f"{path}: sample rate {clip.sample_rate} Hz, expected {sample_rate} Hz")
    return clip


# =============================================================================
# SPLITS AND MANIFEST
# =============================================================================

def split_assign(path: str, val_pct: float = 10.0, test_pct: float = 10.0) -> str:
    """
    'train', 'val' or 'test' for a file, from its speaker portion only.
    """
    if val_pct < 0 or test_pct < 0 or val_pct + test_pct >= 100:
        raise DatasetError(f"Invalid split percentages val={val_pct}, test={test_pct}")
    base = re.split(r'[\\/]', str(path))[-1]
    hash_name = re.sub(r'_nohash_.*$', '', base)
    digest = int(hashlib.sha1(hash_name.encode('utf-8')).hexdigest(), 16)
    pct = (digest % (MAX_NUM_WAVS_PER_CLASS + 1)) * (100.0 / MAX_NUM_WAVS_PER_CLASS)
    if pct < val_pct:
        return 'val'
    if pct < val_pct + test_pct:
        return 'test'
    return 'train'


@dataclass
class SampleEntry:
    path: str       # relative to the dataset root, '/'-separated
    label: int
    split: str


@dataclass
class SampleManifest:
    """
    Attributes:
        labels: Class names; position is the label id
        entries: Sorted by (label directory, file name)
        root: Dataset root the paths are relative to (None for in-memory data)
    """
    labels: List[str]
    entries: List[SampleEntry]
    root: Optional[Path] = None

    def split_entries(self, split: str) -> List[SampleEntry]:
        if split not in SPLITS:
            raise DatasetError(f"Unknown split '{split}'; expected one of {SPLITS}")
        return [e for e in self.entries if e.split == split]

    def counts(self) -> Dict[str, int]:
        return {s: len(self.split_entries(s)) for s in SPLITS}

    def to_dict(self) -> Dict:
        return {
            'labels': list(self.labels),
            'entries': [{'path': e.path, 'label': self.labels[e.label], 'split': e.split} for e in self.entries],
        }

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.to_dict()['entries'], columns=['path', 'label', 'split'])


def scan_dataset(root: Union[str, Path], wanted_labels: Optional[Sequence[str]] = None,
                 map_unknown: bool = False, val_pct: float = 10.0,
                 test_pct: float = 10.0) -> SampleManifest:
    """
    Build a manifest from a label-per-directory tree.

    Args:
        root: Dataset root
        wanted_labels: Label directories to use, in label-id order (default: all, sorted)
        map_unknown: Map other label directories to a trailing '_unknown_' class
            instead of ignoring them
        val_pct, test_pct: Split percentages

    Raises:
        DatasetError: missing root, no labels, no WAV files
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"Dataset root {root} does not exist")

    dirs = sorted(
        p.name for p in root.iterdir()
        if p.is_dir() and p.name != BACKGROUND_NOISE_DIR and not p.name.startswith('_')
    )
    if wanted_labels:
        labels = list(wanted_labels)
        missing = [l for l in labels if l not in dirs]
        if missing:
            raise DatasetError(f"Labels {missing} have no directory under {root}")
        others = [d for d in dirs if d not in labels]
        if map_unknown and others:
            labels.append(UNKNOWN_LABEL)
    else:
        labels, others = dirs, []
    if not labels:
        raise DatasetError(f"No label directories under {root}")

    ids = {name: i for i, name in enumerate(labels)}
    entries = []
    for d in dirs:
        if d in ids:
            label = ids[d]
        elif map_unknown and d in others:
            label = ids[UNKNOWN_LABEL]
        else:
            continue
        for f in sorted((root / d).glob('*.wav')):
            rel = f"{d}/{f.name}"
            entries.append(SampleEntry(rel, label, split_assign(rel, val_pct, test_pct)))

    if not entries:
        raise DatasetError(f"No WAV files found under {root} for labels {labels}")

    manifest = SampleManifest(labels, entries, root)
    logger.info(f"[Dataset] Scanned {root}: {len(entries)} clips, {len(labels)} labels, {manifest.counts()}")
    return manifest


def save_manifest(manifest: SampleManifest, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(json.dumps(manifest.to_dict(), indent=2))
    return path


def load_manifest(path: Union[str, Path], root: Optional[Union[str, Path]] = None) -> SampleManifest:
    """Read a manifest; paths resolve against root (default: the manifest's directory)."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
        labels = list(data['labels'])
        ids = {name: i for i, name in enumerate(labels)}
        entries = [SampleEntry(e['path'], ids[e['label']], e['split']) for e in data['entries']]
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise DatasetError(f"{path}: malformed manifest ({e})") from e
    return SampleManifest(labels, entries, Path(root) if root is not None else path.parent)


# =============================================================================
# SYNTHETIC DATA
# =============================================================================

@dataclass
class LabeledClip:
    path: str
    label: int
    clip: AudioClip


@dataclass
class ClipSet:
    """In-memory labelled clips with dataset-style relative paths."""
    labels: List[str]
    clips: List[LabeledClip] = field(default_factory=list)

    def to_manifest(self, val_pct: float = 10.0, test_pct: float = 10.0) -> SampleManifest:
        entries = [SampleEntry(c.path, c.label, split_assign(c.path, val_pct, test_pct)) for c in self.clips]
        return SampleManifest(list(self.labels), entries, None)

    def by_path(self) -> Dict[str, AudioClip]:
        return {c.path: c.clip for c in self.clips}


def tone_frequency(k: int) -> float:
    return 400.0 + 300.0 * k


def synth_dataset(n_per_class: int, n_classes: int, seed: int,
                  sample_rate: int = 16000, noise_std: float = 0.05,
                  amplitude: float = 0.5, burst_seconds: float = 0.6) -> ClipSet:
    """
    Tone-burst keyword proxy.

    Class k is a burst at 400 + 300k Hz (amplitude 0.5, 0.6 s at a seeded
    start in [0, 0.4] s) over Gaussian noise (sigma 0.05), one second long.
    Clip paths look like synth/<label>/spk<NNNN>_nohash_0.wav with one
    speaker per clip.
    """
    if n_classes < 2:
        raise DatasetError(f"Need at least 2 classes, got {n_classes}")
    if n_per_class < 1:
        raise DatasetError(f"Need at least 1 clip per class, got {n_per_class}")
    if tone_frequency(n_classes - 1) >= 4000:
        logger.warning(f"[Dataset] {n_classes} classes put the top tone above the 4 kHz band edge")

    rng = Rng(seed)
    n = sample_rate
    t = np.arange(n) / sample_rate
    burst = int(round(burst_seconds * sample_rate))
    labels = [f"tone{int(tone_frequency(k))}" for k in range(n_classes)]

    clips = []
    for k, label in enumerate(labels):
        freq = tone_frequency(k)
        for i in range(n_per_class):
            speaker = k * n_per_class + i
            start = int(rng.integers(0, n - burst + 1))
            phase = rng.uniform(0.0, 2 * np.pi, None)
            signal = rng.normal(0.0, noise_std, n)
            signal[start:start + burst] += amplitude * np.sin(2 * np.pi * freq * t[:burst] + phase)
            clip = AudioClip(np.clip(signal, -1.0, 1.0), sample_rate)
            clips.append(LabeledClip(f"synth/{label}/spk{speaker:04d}_nohash_0.wav", k, clip))

    logger.info(f"[Dataset] Synthesized {len(clips)} clips ({n_classes} classes x {n_per_class}, seed={seed})")
    return ClipSet(labels, clips)


def export_clips(clips: ClipSet, root: Union[str, Path]) -> Path:
    """Write a ClipSet as WAV files under root/<path without the leading 'synth/'>."""
    root = Path(root)
    for c in clips.clips:
        rel = c.path.split('/', 1)[1] if c.path.startswith('synth/') else c.path
        target = root / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(write_wav(c.clip.samples, c.clip.sample_rate))
    return root


# =============================================================================
# BACKGROUND NOISE
# =============================================================================

def load_background_noise(root: Union[str, Path], sample_rate: int = 16000) -> List[AudioClip]:
    noise_dir = Path(root) / BACKGROUND_NOISE_DIR
    if not noise_dir.is_dir():
        return []
    return [read_clip(p, sample_rate) for p in sorted(noise_dir.glob('*.wav'))]


def mix_background(clip: AudioClip, noise_clips: Sequence[AudioClip], snr_db: float,
                   rng: Rng) -> AudioClip:
    """
    Add a random segment of a random noise clip at the given SNR (dB).
    Silent clips or silent noise come back unchanged.
    """
    if not noise_clips:
        return clip
    x = clip.samples
    noise = noise_clips[int(rng.integers(0, len(noise_clips)))].samples
    if noise.size == 0 or x.size == 0:
        return clip
    if noise.size < x.size:
        noise = np.tile(noise, -(-x.size // noise.size))
    offset = int(rng.integers(0, noise.size - x.size + 1))
    segment = noise[offset:offset + x.size]

    p_signal = float(np.mean(x ** 2))
    p_noise = float(np.mean(segment ** 2))
    if p_signal == 0.0 or p_noise == 0.0:
        return clip
    gain = np.sqrt(p_signal / (p_noise * 10.0 ** (snr_db / 10.0)))
    return AudioClip(np.clip(x + gain * segment, -1.0, 1.0), clip.sample_rate)


# =============================================================================
# FEATURES
# =============================================================================

@dataclass
class SplitData:
    """
    Attributes:
        x: (N, 1, T, n_mfcc) MFCC stacks
        y: (N,) label ids
        paths: Source path per sample
    """
    x: np.ndarray
    y: np.ndarray
    paths: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.y.shape[0])


@dataclass
class DatasetSplits:
    labels: List[str]
    train: SplitData
    val: SplitData
    test: SplitData

    def split(self, name: str) -> SplitData:
        if name not in SPLITS:
            raise DatasetError(f"Unknown split '{name}'; expected one of {SPLITS}")
        return getattr(self, name)


def load_features(manifest: SampleManifest, split: str, cfg: FrontendConfig = DEFAULT_FRONTEND,
                  clips: Optional[Dict[str, AudioClip]] = None,
                  noise_clips: Sequence[AudioClip] = (), noise_snr: Optional[float] = None,
                  seed: int = 0) -> SplitData:
    """
    Featurize one split.

    Clips come from `clips` (in-memory, keyed by manifest path) or from WAV
    files under manifest.root. Noise mixing applies when noise_snr is set.
    """
    entries = manifest.split_entries(split)
    signals = []
    rng = Rng(seed)
    for e in entries:
        if clips is not None:
            clip = clips[e.path]
        elif manifest.root is not None:
            clip = read_clip(manifest.root / e.path, cfg.sample_rate)
        else:
            raise DatasetError("In-memory manifest needs its clips")
        if clip.sample_rate != cfg.sample_rate:
            raise WavFormatError(f"{e.path}: sample rate {clip.sample_rate} Hz, expected {cfg.sample_rate} Hz")
        if noise_snr is not None:
            clip = mix_background(clip, noise_clips, noise_snr, rng)
        signals.append(clip.samples)

    x = featurize_batch(signals, cfg)
    y = np.array([e.label for e in entries], dtype=np.int64)
    return SplitData(x, y, [e.path for e in entries])


def load_splits(manifest: SampleManifest, cfg: FrontendConfig = DEFAULT_FRONTEND,
                clips: Optional[Dict[str, AudioClip]] = None,
                noise_clips: Sequence[AudioClip] = (), noise_snr: Optional[float] = None,
                seed: int = 0) -> DatasetSplits:
    """All three splits; noise mixing only touches the training split."""
    train = load_features(manifest, 'train', cfg, clips, noise_clips, noise_snr, seed)
    val = load_features(manifest, 'val', cfg, clips)
    test = load_features(manifest, 'test', cfg, clips)
    logger.info(f"[Dataset] Features: train={len(train)}, val={len(val)}, test={len(test)}")
    return DatasetSplits(list(manifest.labels), train, val, test)
