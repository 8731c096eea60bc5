"""
Activation containers and the "ACTV" binary dump format.

Layout (little-endian):
    magic "ACTV" | version u32 | model_id (u16 len + UTF-8) | dataset_id (u16 len + UTF-8)
    | layer_count u32 | per layer: name (u16 len + UTF-8), rows u32, cols u32,
    rows*cols float32 row-major
"""

import io
import logging
import struct
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .exceptions import (
    DumpCorruptionError,
    DumpFormatError,
    DumpWriteError,
    UnsupportedVersionError,
    ValidationError,
)
from .utils import atomic_write

logger = logging.getLogger(__name__)

MAGIC = b'ACTV'
VERSION = 1
EXTENSION = '.actv'

_U16 = struct.Struct('<H')
_U32 = struct.Struct('<I')
_DIMS = struct.Struct('<II')


@dataclass(frozen=True)
class LayerActivations:
    """One layer's activations: n samples x p features"""
    name: str
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValidationError(f"Layer {self.name!r}: expected a 2-D matrix, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValidationError(f"Layer {self.name!r}: empty matrix {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValidationError(f"Layer {self.name!r}: NaN/Inf entries")
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, 'data', data)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class ActivationSet:
    """Per-layer activations of one model over one dataset"""
    model_id: str
    dataset_id: str
    layers: Tuple[LayerActivations, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValidationError("ActivationSet needs at least one layer")
        names = [layer.name for layer in layers]
        if len(set(names)) != len(names):
            raise ValidationError(f"Duplicate layer names: {names}")
        counts = {layer.shape[0] for layer in layers}
        if len(counts) != 1:
            raise ValidationError(f"Layers disagree on sample count: {sorted(counts)}")
        object.__setattr__(self, 'layers', layers)

    @property
    def n_samples(self) -> int:
        return self.layers[0].shape[0]

    @property
    def layer_names(self):
        return [layer.name for layer in self.layers]

    def __len__(self):
        return len(self.layers)

    def __getitem__(self, index):
        return self.layers[index]

    def equals(self, other: 'ActivationSet') -> bool:
        """Equality at float32 storage precision"""
        if (self.model_id, self.dataset_id, self.layer_names) != (other.model_id, other.dataset_id, other.layer_names):
            return False
        return all(
            a.shape == b.shape and np.array_equal(a.data.astype('<f4'), b.data.astype('<f4'))
            for a, b in zip(self.layers, other.layers)
        )

    def truncated(self, n: int) -> 'ActivationSet':
        """First n samples of every layer"""
        return ActivationSet(
            self.model_id,
            self.dataset_id,
            tuple(LayerActivations(layer.name, layer.data[:n]) for layer in self.layers),
        )


def _encode_text(text: str) -> bytes:
    raw = text.encode('utf-8')
    if len(raw) > 0xFFFF:
        raise ValidationError(f"Identifier too long for dump format: {len(raw)} bytes")
    return _U16.pack(len(raw)) + raw


def encode_activation_dump(acts: ActivationSet) -> bytes:
    """Serialize an ActivationSet to bytes; identical sets give identical bytes"""
    parts = [MAGIC, _U32.pack(VERSION), _encode_text(acts.model_id), _encode_text(acts.dataset_id),
             _U32.pack(len(acts.layers))]
    for layer in acts.layers:
        rows, cols = layer.shape
        parts.append(_encode_text(layer.name))
        parts.append(_DIMS.pack(rows, cols))
        parts.append(np.ascontiguousarray(layer.data, dtype='<f4').tobytes(order='C'))
    return b''.join(parts)


def write_activation_dump(acts: ActivationSet, sink) -> int:
    """
    Write an ActivationSet to a binary stream

    Args:
        acts (ActivationSet): validated on construction
        sink: writable binary stream

    Returns:
        int: bytes written
    """
    payload = encode_activation_dump(acts)
    written = 0
    view = memoryview(payload)
    try:
        while written < len(payload):
            n = sink.write(view[written:])
            # raw streams may write partially; buffered ones return None or the full size
            written += len(payload) - written if n is None else n
            if n == 0:
                raise OSError("sink accepted no bytes")
    except OSError as e:
        raise DumpWriteError(f"Failed writing activation dump after {written} bytes: {e}", written)
    logger.debug(f"Wrote {written} bytes for {acts.model_id}/{acts.dataset_id}")
    return written


class _Reader:
    def __init__(self, buffer: bytes):
        self.buffer = buffer
        self.offset = 0
        self.layer_index = None

    def take(self, size: int, what: str) -> bytes:
        end = self.offset + size
        if end > len(self.buffer):
            where = f" in layer {self.layer_index}" if self.layer_index is not None else " in header"
            raise DumpCorruptionError(
                f"Truncated activation dump{where}: need {size} bytes for {what} at offset "
                f"{self.offset}, stream has {len(self.buffer) - self.offset}",
                layer_index=self.layer_index,
            )
        chunk = self.buffer[self.offset:end]
        self.offset = end
        return chunk

    def u16(self, what):
        return _U16.unpack(self.take(2, what))[0]

    def u32(self, what):
        return _U32.unpack(self.take(4, what))[0]

    def text(self, what):
        raw = self.take(self.u16(f"{what} length"), what)
        try:
            return raw.decode('utf-8')
        except UnicodeDecodeError as e:
            raise DumpFormatError(f"{what} is not valid UTF-8: {e}")


def read_activation_dump(source) -> ActivationSet:
    """
    Read an ActivationSet from a binary stream or bytes

    Raises:
        DumpFormatError: bad magic
        UnsupportedVersionError: version != 1
        DumpCorruptionError: stream shorter than the declared sizes
        ValidationError: NaN/Inf in the payload
    """
    buffer = bytes(source) if isinstance(source, (bytes, bytearray, memoryview)) else source.read()
    reader = _Reader(buffer)

    magic = reader.take(4, 'magic')
    if magic != MAGIC:
        raise DumpFormatError(f"Not an activation dump: magic {magic!r}")
    version = reader.u32('version')
    if version != VERSION:
        raise UnsupportedVersionError(f"Unsupported activation dump version {version}")

    model_id = reader.text('model_id')
    dataset_id = reader.text('dataset_id')
    layer_count = reader.u32('layer_count')

    layers = []
    for index in range(layer_count):
        reader.layer_index = index
        name = reader.text('layer name')
        rows, cols = _DIMS.unpack(reader.take(_DIMS.size, 'layer dimensions'))
        raw = reader.take(rows * cols * 4, f"{rows}x{cols} payload")
        data = np.frombuffer(raw, dtype='<f4').reshape(rows, cols)
        if not np.all(np.isfinite(data)):
            raise ValidationError(f"Layer {index} ({name!r}) contains NaN/Inf")
        layers.append(LayerActivations(name, data))

    if reader.offset != len(buffer):
        logger.warning(f"{len(buffer) - reader.offset} trailing bytes after activation dump ignored")

    return ActivationSet(model_id, dataset_id, tuple(layers))


def save_activation_set(acts: ActivationSet, path) -> int:
    with atomic_write(path, 'wb') as f:
        return write_activation_dump(acts, f)


def load_activation_set(path) -> ActivationSet:
    with open(path, 'rb') as f:
        return read_activation_dump(f)


def roundtrip(acts: ActivationSet) -> ActivationSet:
    """Dump and reload in memory"""
    sink = io.BytesIO()
    write_activation_dump(acts, sink)
    return read_activation_dump(sink.getvalue())
