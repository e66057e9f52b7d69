"""
Shared helpers for the test modules.

- finite-difference gradient checking
- tiny and random model configs
- a naive loop convolution (reference output and MAC count)
- hand-built WAV payloads, including malformed ones
- re-packing TSPN headers with a valid CRC
"""

import json
import struct
import sys
import zlib
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np

from src.model_graph import ModelConfig, parse_config
from src.tensor import Rng

GRAD_H = 1e-5
GRAD_TOL = 1e-4


# =============================================================================
# GRADIENT CHECKING
# =============================================================================

def finite_difference(loss_fn: Callable[[], float], arr: np.ndarray, h: float = GRAD_H) -> np.ndarray:
    """Central differences of loss_fn() with respect to every element of arr (perturbed in place)."""
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = loss_fn()
        flat[i] = orig - h
        minus = loss_fn()
        flat[i] = orig
        out[i] = (plus - minus) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-4)
    return np.abs(analytic - numeric) / denom


def assert_gradients(loss_fn: Callable[[], float], arrays: Dict[str, np.ndarray],
                     analytic: Dict[str, np.ndarray], tol: float = GRAD_TOL) -> None:
    """Every coordinate of every named array within tol relative error."""
    for name, arr in arrays.items():
        numeric = finite_difference(loss_fn, arr)
        got = np.asarray(analytic[name], dtype=np.float64).reshape(arr.shape)
        err = relative_error(got, numeric)
        worst = float(err.max()) if err.size else 0.0
        assert worst < tol, f"{name}: max relative error {worst:.3g}"


def projection(shape: Sequence[int], seed: int = 99) -> np.ndarray:
    """Fixed random weights turning an output into a scalar loss sum(R * y)."""
    return Rng(seed).normal(0.0, 1.0, tuple(shape))


# =============================================================================
# CONFIGS
# =============================================================================

def tiny_config(n_classes: int = 3, input_shape: Tuple[int, int, int, int] = (1, 1, 8, 6),
                batch_norm: bool = False, unpool: str = 'replicate',
                micro_ops_only: bool = False) -> ModelConfig:
    """conv(4) -> condenser(c1=4) -> conv(6) -> gap -> dense -> softmax on a small input."""
    return parse_config({
        'name': 'tiny',
        'input_shape': list(input_shape),
        'n_classes': n_classes,
        'micro_ops_only': micro_ops_only,
        'layers': [
            {'type': 'conv', 'channels': 4, 'batch_norm': batch_norm},
            {'type': 'attention_condenser', 'c1': 4, 'groups': 2, 'unpool': unpool},
            {'type': 'conv', 'channels': 6, 'batch_norm': batch_norm},
            {'type': 'global_avg_pool'},
            {'type': 'dense', 'units': n_classes},
            {'type': 'softmax'},
        ],
    })


def desk_config(n_classes: int = 2) -> Dict:
    """Small network on the real 98 x 40 MFCC input."""
    return {
        'name': 'desk',
        'input_shape': [1, 1, 98, 40],
        'n_classes': n_classes,
        'layers': [
            {'type': 'conv', 'channels': 4, 'stride': 2, 'batch_norm': True},
            {'type': 'attention_condenser', 'c1': 4},
            {'type': 'conv', 'channels': 4, 'stride': 2},
            {'type': 'global_avg_pool'},
            {'type': 'dense', 'units': n_classes},
            {'type': 'softmax'},
        ],
    }


def _divisors(n: int) -> List[int]:
    return [d for d in range(1, n + 1) if n % d == 0]


def random_config(seed: int) -> ModelConfig:
    """A random valid template-shaped config."""
    rng = Rng(seed)

    def pick(options):
        return options[int(rng.integers(0, len(options)))]

    def bn() -> bool:
        return False if micro else bool(rng.integers(0, 2))

    t, f = int(rng.integers(8, 41)), int(rng.integers(8, 41))
    micro = bool(rng.integers(0, 2))
    c = pick([2, 4, 6, 8, 12, 16])
    n_classes = int(rng.integers(2, 13))

    layers = [{'type': 'conv', 'channels': c, 'stride': pick([1, 2]), 'batch_norm': bn(),
               'padding': pick(['same', 'valid'])}]
    for _ in range(int(rng.integers(0, 4))):
        c1 = pick([2, 4, 6, 8, 12])
        common = [g for g in _divisors(c) if c1 % g == 0]
        layers.append({'type': 'attention_condenser', 'c1': c1, 'groups': pick(common),
                       'unpool': pick(['replicate', 'switch'])})
    c2 = pick([4, 8, 12, 20])
    layers.append({'type': 'conv', 'channels': c2, 'batch_norm': bn(), 'kernel': pick([1, 3])})
    layers += [{'type': 'global_avg_pool'}, {'type': 'dense', 'units': n_classes}, {'type': 'softmax'}]

    return parse_config({
        'name': f'random{seed}',
        'input_shape': [1, 1, t, f],
        'n_classes': n_classes,
        'micro_ops_only': micro,
        'layers': layers,
    })


# =============================================================================
# NAIVE CONVOLUTION
# =============================================================================

def naive_conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, groups: int = 1,
                 stride: int = 1, padding: str = 'valid') -> Tuple[np.ndarray, int]:
    """
    Loop-by-loop grouped cross-correlation.

    Returns:
        (output, multiply-adds performed for one sample, padded taps included)
    """
    n, c_in, h, wd = x.shape
    c_out, cg_in, kh, kw = w.shape
    cg_out = c_out // groups
    if padding == 'same':
        ho, wo = -(-h // stride), -(-wd // stride)
        ph = max((ho - 1) * stride + kh - h, 0)
        pw = max((wo - 1) * stride + kw - wd, 0)
        pads = ((ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2))
    else:
        ho, wo = (h - kh) // stride + 1, (wd - kw) // stride + 1
        pads = ((0, 0), (0, 0))
    xp = np.pad(x, ((0, 0), (0, 0)) + pads)

    out = np.zeros((n, c_out, ho, wo))
    macs = 0
    for s in range(n):
        for co in range(c_out):
            g = co // cg_out
            for i in range(ho):
                for j in range(wo):
                    acc = b[co]
                    for ci in range(cg_in):
                        for u in range(kh):
                            for v in range(kw):
                                acc += w[co, ci, u, v] * xp[s, g * cg_in + ci, i * stride + u, j * stride + v]
                                if s == 0:
                                    macs += 1
                    out[s, co, i, j] = acc
    return out, macs


# =============================================================================
# WAV PAYLOADS
# =============================================================================

def wav_payload(pcm: bytes, sample_rate: int = 16000, channels: int = 1, bits: int = 16,
                audio_format: int = 1, data_size: Optional[int] = None) -> bytes:
    """RIFF/WAVE bytes with a hand-written fmt chunk (data_size may lie)."""
    block_align = channels * bits // 8
    fmt = struct.pack('<HHIIHH', audio_format, channels, sample_rate,
                      sample_rate * block_align, block_align, bits)
    size = len(pcm) if data_size is None else data_size
    body = b'WAVE' + b'fmt ' + struct.pack('<I', len(fmt)) + fmt + b'data' + struct.pack('<I', size) + pcm
    return b'RIFF' + struct.pack('<I', len(body)) + body


def pcm16(samples) -> bytes:
    return np.asarray(np.round(np.asarray(samples) * 32768.0).clip(-32768, 32767), dtype='<i2').tobytes()


def write_tree(root: Path, layout: Dict[str, List[str]], sample_rate: int = 16000,
               seed: int = 0) -> Path:
    """Speech-Commands style tree: {label: [file names]} of short noise clips."""
    rng = Rng(seed)
    for label, names in layout.items():
        (root / label).mkdir(parents=True, exist_ok=True)
        for name in names:
            samples = rng.normal(0.0, 0.1, sample_rate // 4).clip(-1, 1)
            (root / label / name).write_bytes(wav_payload(pcm16(samples), sample_rate))
    return root


# =============================================================================
# MODEL FILES
# =============================================================================

def recrc(body: bytes) -> bytes:
    return body + struct.pack('<I', zlib.crc32(body) & 0xFFFFFFFF)


def edit_model_header(data: bytes, edit: Callable[[Dict], None]) -> bytes:
    """Apply edit(header) to a TSPN payload and re-pack it with a valid CRC."""
    magic, version, header_len = struct.unpack_from('<4sHI', data)
    header = json.loads(data[10:10 + header_len])
    edit(header)
    new_header = json.dumps(header, sort_keys=True, separators=(',', ':')).encode()
    return recrc(struct.pack('<4sHI', magic, version, len(new_header)) + new_header + data[10 + header_len:-4])
