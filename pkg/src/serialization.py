"""
Model File Format (TSPN)

Little-endian layout:

    magic          4 bytes   b'TSPN'
    version        u16
    header_len     u32
    header         canonical JSON (sorted keys, no whitespace): config + tensor manifest
    blob           raw tensor payloads, in manifest order
    crc32          u32 over every byte before it

Manifest entries: name, role (param | buffer), shape, dtype (f64 | f32 | int8),
offset and length into the blob. int8 entries also carry "bits"; their
payload is scale f64, range minimum f64, zero_point i32, then the codes.

Saving the same model twice yields identical bytes, and f64 files reload
bit-exactly.
"""

import json
import logging
import struct
import zlib
from pathlib import Path
from typing import Any, Dict, List, Literal, Tuple, Union

import numpy as np

from .errors import ChecksumError, ModelFormatError, VersionMismatchError
from .model_graph import (
    INPUT_MEAN,
    INPUT_STD,
    Model,
    build_layers,
    config_to_dict,
    expected_registry,
    parse_config,
    validate_config,
)
from .quantizer import QuantizedTensor, dequantize
from .settings import MODEL_FORMAT_VERSION, MODEL_MAGIC

logger = logging.getLogger(__name__)

FloatDtype = Literal['f64', 'f32']

_PREAMBLE = struct.Struct('<4sHI')
_CRC = struct.Struct('<I')
_QUANT_HEADER = struct.Struct('<ddi')
_NUMPY_DTYPES = {'f64': np.dtype('<f8'), 'f32': np.dtype('<f4'), 'int8': np.dtype('i1')}


def _canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(',', ':')).encode('utf-8')


def _encode_tensor(name: str, value: np.ndarray, dtype: FloatDtype,
                   qt: QuantizedTensor = None) -> Tuple[Dict[str, Any], bytes]:
    if qt is not None:
        payload = _QUANT_HEADER.pack(qt.scale, qt.minimum, qt.zero_point)
        payload += np.ascontiguousarray(qt.q, dtype=np.int8).tobytes()
        return {'name': name, 'shape': list(qt.shape), 'dtype': 'int8', 'bits': qt.bits}, payload
    payload = np.ascontiguousarray(value, dtype=_NUMPY_DTYPES[dtype]).tobytes()
    return {'name': name, 'shape': list(value.shape), 'dtype': dtype}, payload


def model_to_bytes(m: Model, dtype: FloatDtype = 'f64') -> bytes:
    """Encode a model. Quantized weights are always stored as int8 records."""
    if dtype not in ('f64', 'f32'):
        raise ValueError(f"Unsupported storage dtype '{dtype}'")

    entries: List[Dict[str, Any]] = []
    chunks: List[bytes] = []
    offset = 0
    tensors = [('param', k, v) for k, v in m.params.items()] + [('buffer', k, v) for k, v in m.buffers.items()]
    for role, name, value in tensors:
        entry, payload = _encode_tensor(name, value, dtype, m.quantized.get(name) if role == 'param' else None)
        entry.update(role=role, offset=offset, length=len(payload))
        entries.append(entry)
        chunks.append(payload)
        offset += len(payload)

    header = _canonical_json({
        'config': config_to_dict(m.config),
        'tensors': entries,
    })
    body = _PREAMBLE.pack(MODEL_MAGIC, MODEL_FORMAT_VERSION, len(header)) + header + b''.join(chunks)
    return body + _CRC.pack(zlib.crc32(body) & 0xFFFFFFFF)


def save_model(m: Model, path: Union[str, Path], dtype: FloatDtype = 'f64') -> Path:
    path = Path(path)
    data = model_to_bytes(m, dtype)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    logger.info(f"[Model IO] Saved {m.config.name} to {path} ({len(data)} bytes, {dtype})")
    return path


def read_format_version(data: bytes) -> int:
    """Version field of a TSPN payload (checks the magic only)."""
    if len(data) < _PREAMBLE.size:
        raise ModelFormatError(f"File truncated: {len(data)} bytes is shorter than the preamble")
    magic, version, _ = _PREAMBLE.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise ModelFormatError(f"Bad magic {magic!r}, expected {MODEL_MAGIC!r}")
    return version


def _check_entry(entry: Any) -> Dict[str, Any]:
    """Typed copy of one manifest entry; raises KeyError/TypeError when malformed."""
    if not isinstance(entry, dict):
        raise TypeError(f"manifest entry must be an object, got {type(entry).__name__}")
    checked = dict(entry)
    for key, kind in (('name', str), ('dtype', str), ('offset', int), ('length', int), ('shape', list)):
        value = entry[key]
        if not isinstance(value, kind) or isinstance(value, bool):
            raise TypeError(f"manifest field '{key}' has type {type(value).__name__}")
    if not all(isinstance(d, int) and not isinstance(d, bool) and d >= 0 for d in entry['shape']):
        raise TypeError(f"manifest shape {entry['shape']} is not a list of non-negative ints")
    if not isinstance(entry.get('bits', 8), int):
        raise TypeError(f"manifest field 'bits' has type {type(entry['bits']).__name__}")
    checked['shape'] = tuple(entry['shape'])
    return checked


def _decode_tensor(entry: Dict[str, Any], blob: bytes) -> Tuple[np.ndarray, QuantizedTensor]:
    name, shape, dtype = entry['name'], entry['shape'], entry['dtype']
    start, length = entry['offset'], entry['length']
    if start < 0 or start + length > len(blob):
        raise ModelFormatError(f"Tensor {name} runs past the end of the blob")
    payload = blob[start:start + length]
    count = int(np.prod(shape)) if shape else 1

    if dtype == 'int8':
        if length != _QUANT_HEADER.size + count:
            raise ModelFormatError(f"Tensor {name}: int8 payload has {length} bytes, expected "
                                   f"{_QUANT_HEADER.size + count}")
        scale, minimum, zero_point = _QUANT_HEADER.unpack_from(payload)
        q = np.frombuffer(payload, dtype=np.int8, offset=_QUANT_HEADER.size).reshape(shape).copy()
        qt = QuantizedTensor(q, scale, zero_point, minimum, int(entry.get('bits', 8)), shape)
        return dequantize(qt), qt

    if dtype not in ('f64', 'f32'):
        raise ModelFormatError(f"Tensor {name}: unknown dtype '{dtype}'")
    np_dtype = _NUMPY_DTYPES[dtype]
    if length != count * np_dtype.itemsize:
        raise ModelFormatError(f"Tensor {name}: {length} bytes for {count} {dtype} values")
    value = np.frombuffer(payload, dtype=np_dtype).reshape(shape).astype(np.float64)
    return value, None


def model_from_bytes(data: bytes) -> Model:
    """
    Decode a model.

    Raises:
        ModelFormatError: bad magic, truncated file, malformed header/manifest
        VersionMismatchError: unsupported format version
        ChecksumError: CRC32 mismatch
    """
    version = read_format_version(data)
    if version != MODEL_FORMAT_VERSION:
        raise VersionMismatchError(
            f"Unsupported model format version {version} (this build reads {MODEL_FORMAT_VERSION})"
        )
    _, _, header_len = _PREAMBLE.unpack_from(data)
    header_end = _PREAMBLE.size + header_len
    if len(data) < header_end + _CRC.size:
        raise ModelFormatError(f"File truncated: header needs {header_end + _CRC.size} bytes, got {len(data)}")

    body, (stored_crc,) = data[:-_CRC.size], _CRC.unpack_from(data, len(data) - _CRC.size)
    actual_crc = zlib.crc32(body) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        logger.warning(f"[Model IO] Checksum mismatch: stored {stored_crc:08x}, computed {actual_crc:08x}")
        raise ChecksumError(f"Checksum mismatch: stored {stored_crc:08x}, computed {actual_crc:08x}")

    try:
        header = json.loads(body[_PREAMBLE.size:header_end].decode('utf-8'))
        entries = [_check_entry(e) for e in header['tensors']]
        config = parse_config(header['config'])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise ModelFormatError(f"Malformed header: {e!r}") from e

    blob = body[header_end:]
    if sum(e['length'] for e in entries) != len(blob):
        raise ModelFormatError("Blob length does not match the tensor manifest")

    validate_config(config)
    layers = build_layers(config)
    registry = expected_registry(layers)

    params: Dict[str, np.ndarray] = {}
    buffers: Dict[str, np.ndarray] = {}
    quantized: Dict[str, QuantizedTensor] = {}
    for entry in entries:
        value, qt = _decode_tensor(entry, blob)
        name = entry['name']
        if entry.get('role') == 'param':
            params[name] = value
            if qt is not None:
                quantized[name] = qt
        else:
            buffers[name] = value

    if set(params) != set(registry):
        raise ModelFormatError(
            f"Parameter manifest does not match the config: missing {sorted(set(registry) - set(params))}, "
            f"unexpected {sorted(set(params) - set(registry))}"
        )
    for name, shape in registry.items():
        if params[name].shape != shape:
            raise ModelFormatError(f"Tensor {name} has shape {params[name].shape}, config expects {shape}")
    required = {INPUT_MEAN, INPUT_STD}.union(*(layer.init_buffers() for layer in layers))
    if not required <= set(buffers):
        raise ModelFormatError(f"Missing buffers {sorted(required - set(buffers))}")

    return Model(config=config, layers=layers, params=params, buffers=buffers, quantized=quantized)


def load_model(path: Union[str, Path]) -> Model:
    path = Path(path)
    m = model_from_bytes(path.read_bytes())
    logger.info(f"[Model IO] Loaded {m.config.name} from {path} ({m.param_count} params)")
    return m
