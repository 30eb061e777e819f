"""Binary model file.

Layout::

    8 bytes   magic  b"SCNN\\0\\0\\0\\1" (last 4 bytes are the format version)
    4 bytes   little-endian header length
    n bytes   UTF-8 JSON header (layers, normalization, seed, parameter count)
    4·count   parameters as little-endian float32, in declaration order

Parameters are trained in float64 and quantized to float32 on save, so a
loaded model is the float32-rounded version of what was saved; saving a
loaded model reproduces the file byte for byte.
"""

import json
import struct

import numpy as np

from .cnn import CnnModel, LayerSpec, PARAM_ORDER, check_architecture, param_shapes
from .errors import ModelFormatError, ShapeError
from .utils import ensure_dir


MAGIC = b'SCNN'
FORMAT_VERSION = 1
PREAMBLE = MAGIC + struct.pack('>I', FORMAT_VERSION)
PREAMBLE_SIZE = len(PREAMBLE) + 4


def build_header(model: CnnModel) -> dict:
    return {
        'format_version': FORMAT_VERSION,
        'label_size': model.label_size,
        'layers': [layer.to_dict() for layer in model.layers],
        'norm_mean': [float(v) for v in model.norm_mean],
        'norm_std': [float(v) for v in model.norm_std],
        'seed': int(model.seed),
        'parameter_count': model.parameter_count,
        'parameters': [{'name': name, 'shape': list(np.shape(model.params[name]))}
                       for name in PARAM_ORDER],
    }


def dumps_model(model: CnnModel) -> bytes:
    header = json.dumps(build_header(model), sort_keys=True).encode('utf-8')
    body = b''.join(np.asarray(model.params[name], dtype='<f4').tobytes() for name in PARAM_ORDER)
    return PREAMBLE + struct.pack('<I', len(header)) + header + body


def save_model(model: CnnModel, path: str):
    """Write ``model`` to ``path`` in the SCNN format."""
    ensure_dir(path)
    with open(path, 'wb') as f:
        f.write(dumps_model(model))


def loads_model(data: bytes) -> CnnModel:
    if len(data) < PREAMBLE_SIZE:
        raise ModelFormatError('model file truncated before header', size=len(data))
    if data[:4] != MAGIC:
        raise ModelFormatError('not a model file (bad magic)', magic=data[:4].hex())
    version = struct.unpack('>I', data[4:8])[0]
    if version != FORMAT_VERSION:
        raise ModelFormatError(f'unsupported model format version {version}',
                               version=version, expected=FORMAT_VERSION)
    (header_len,) = struct.unpack('<I', data[8:12])
    if len(data) < PREAMBLE_SIZE + header_len:
        raise ModelFormatError('model file truncated inside header', size=len(data))
    try:
        header = json.loads(data[PREAMBLE_SIZE:PREAMBLE_SIZE + header_len].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFormatError(f'corrupt model header: {e}')

    try:
        layers = [LayerSpec.from_dict(d) for d in header['layers']]
        count = int(header['parameter_count'])
    except (KeyError, TypeError) as e:
        raise ModelFormatError(f'model header is missing fields: {e}')
    try:
        check_architecture(layers)
    except ShapeError as e:
        raise ModelFormatError(f"model layers are not the fixed architecture: {e.message}")
    shapes = param_shapes(layers)
    if count != sum(int(np.prod(s)) for s in shapes.values()):
        raise ModelFormatError('parameter count does not match layer specs', count=count)
    offset = PREAMBLE_SIZE + header_len
    if len(data) - offset != 4 * count:
        raise ModelFormatError('parameter blob has the wrong length',
                               expected=4 * count, got=len(data) - offset)

    params = {}
    for name in PARAM_ORDER:
        shape = shapes[name]
        size = int(np.prod(shape))
        values = np.frombuffer(data, dtype='<f4', count=size, offset=offset)
        params[name] = values.astype(np.float64).reshape(shape)
        offset += 4 * size
    try:
        return CnnModel(
            layers=layers,
            params=params,
            norm_mean=np.array(header['norm_mean'], dtype=np.float64),
            norm_std=np.array(header['norm_std'], dtype=np.float64),
            seed=int(header['seed']),
            version=int(header['format_version']),
        )
    except (ShapeError, KeyError) as e:
        raise ModelFormatError(f"model header is inconsistent: {getattr(e, 'message', e)}")


def load_model(path: str) -> CnnModel:
    """Read a model written by :func:`save_model`."""
    with open(path, 'rb') as f:
        return loads_model(f.read())
