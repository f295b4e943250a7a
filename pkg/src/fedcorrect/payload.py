"""Mixed-precision payloads: quantization policy, wire codec, transport framing.

The download payload carries the full variable list in a versioned little-endian
binary format; the upload carries per-variable gradients plus the client weight
and example count.  Both round-trip bit-exactly and have closed-form sizes so
byte accounting never needs to encode anything.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import ConfigError, DecodeError
from .params import PRECISION_BYTES, PRECISION_DTYPE, ParameterSet, Variable

MAGIC_MODEL = b"FCMP"
MAGIC_UPDATE = b"FCGU"
FORMAT_VERSION = 1

# Largest finite half-precision magnitude; conversion clamps here.
F16_MAX = 65504.0

TRANSPORT_RAW = 0
TRANSPORT_ZLIB = 1
TRANSPORT_OVERHEAD = 9  # flag byte + 8-byte body length

_PRECISION_TAG = {"f32": 0, "f16": 1}
_TAG_PRECISION = {v: k for k, v in _PRECISION_TAG.items()}
_KIND_TAG = {"matrix": 0, "bias": 1}
_TAG_KIND = {v: k for k, v in _KIND_TAG.items()}
# Explicit little-endian dtypes keep the wire format host-independent.
_WIRE_DTYPE = {"f32": np.dtype("<f4"), "f16": np.dtype("<f2")}


@dataclass(frozen=True)
class PrecisionPolicy:
    """Width rule for download payloads.

    With ``omc_enabled`` the matrices of non-trainable layers are held at
    half precision; biases and trainable variables always stay f32.
    """

    omc_enabled: bool = False


@dataclass
class QuantizeStats:
    """Counters for saturating and vanishing conversions."""

    overflow: int = 0
    underflow: int = 0


def apply_policy(
    params: ParameterSet,
    policy: PrecisionPolicy,
    stats: QuantizeStats | None = None,
) -> ParameterSet:
    """Quantize non-trainable matrices to f16 (round-to-nearest-even).

    Out-of-range values clamp to the largest finite half and bump
    ``stats.overflow``; nonzero values that vanish bump ``stats.underflow``.
    Idempotent: already-quantized variables pass through untouched.
    """
    if not policy.omc_enabled:
        return params
    replaced = {}
    for v in params:
        if v.kind != "matrix" or v.trainable or v.precision == "f16":
            continue
        wide = v.data.astype(np.float64)
        half = np.clip(wide, -F16_MAX, F16_MAX).astype(np.float16)
        if stats is not None:
            stats.overflow += int(np.count_nonzero(np.abs(wide) > F16_MAX))
            stats.underflow += int(np.count_nonzero((half == 0) & (wide != 0)))
        replaced[v.name] = v.replace(precision="f16", data=half)
    if not replaced:
        return params
    return params.replace_variables(replaced)


def dequantize_trainable(params: ParameterSet, names: Iterable[str]) -> ParameterSet:
    """Widen the named variables to f32 storage.  Exact for f16 inputs."""
    replaced = {}
    for name in sorted(set(names)):
        if name not in params:
            raise ConfigError(f"unknown trainable variable {name!r}")
        v = params.get(name)
        if v.precision == "f16":
            replaced[name] = v.replace(precision="f32", data=v.data.astype(np.float32))
    if not replaced:
        return params
    return params.replace_variables(replaced)


@dataclass(frozen=True)
class Payload:
    """Encoded model bytes, pre-transport."""

    data: bytes

    @property
    def size(self) -> int:
        return len(self.data)


def payload_size(params: ParameterSet) -> int:
    """Exact serialized byte count, computed without encoding."""
    total = len(MAGIC_MODEL) + 6  # magic + version u16 + count u32
    for v in params:
        # name_len u16 + name + kind u8 + layer u16 + precision u8
        # + trainable u8 + rank u8 + dims u32 each + element bytes
        total += 8 + len(v.name.encode("utf-8")) + 4 * len(v.shape) + v.nbytes
    return total


def serialize(params: ParameterSet) -> Payload:
    out = bytearray()
    out += MAGIC_MODEL
    out += struct.pack("<HI", FORMAT_VERSION, len(params))
    for v in params:
        name = v.name.encode("utf-8")
        out += struct.pack("<H", len(name))
        out += name
        out += struct.pack(
            "<BHBBB",
            _KIND_TAG[v.kind],
            v.layer_index,
            _PRECISION_TAG[v.precision],
            int(v.trainable),
            len(v.shape),
        )
        out += struct.pack(f"<{len(v.shape)}I", *v.shape)
        out += np.ascontiguousarray(v.data, dtype=_WIRE_DTYPE[v.precision]).tobytes()
    payload = Payload(bytes(out))
    assert payload.size == payload_size(params)
    return payload


def deserialize(payload: Payload | bytes) -> ParameterSet:
    blob = payload.data if isinstance(payload, Payload) else bytes(payload)
    view = memoryview(blob)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(blob):
            raise DecodeError("truncated payload")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC_MODEL:
        raise DecodeError("bad payload magic")
    version, count = struct.unpack("<HI", take(6))
    if version != FORMAT_VERSION:
        raise DecodeError(f"unsupported payload version {version}")
    variables = []
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        kind_tag, layer_index, prec_tag, trainable, rank = struct.unpack(
            "<BHBBB", take(6)
        )
        if kind_tag not in _TAG_KIND:
            raise DecodeError(f"bad kind tag for variable {name!r}")
        if prec_tag not in _TAG_PRECISION:
            raise DecodeError(f"bad precision tag for variable {name!r}")
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        precision = _TAG_PRECISION[prec_tag]
        raw = take(math.prod(shape) * PRECISION_BYTES[precision])
        data = np.frombuffer(raw, dtype=_WIRE_DTYPE[precision]).astype(
            PRECISION_DTYPE[precision]
        )
        variables.append(Variable(
            name=name, layer_index=layer_index, kind=_TAG_KIND[kind_tag],
            shape=shape, precision=precision, data=data,
            trainable=bool(trainable),
        ))
    if pos != len(blob):
        raise DecodeError("trailing bytes after payload")
    return ParameterSet(variables)


def update_size(grads: Mapping[str, np.ndarray]) -> int:
    """Exact upload byte count for a gradient map."""
    total = len(MAGIC_UPDATE) + 18  # version u16 + weight f64 + count u32 x2
    for name, arr in grads.items():
        a = np.asarray(arr)
        total += 3 + len(name.encode("utf-8")) + 4 * a.ndim + 4 * a.size
    return total


def encode_update(
    grads: Mapping[str, np.ndarray], weight: float, example_count: int
) -> bytes:
    """Wire form of one client upload: f32 gradients plus weight metadata."""
    out = bytearray()
    out += MAGIC_UPDATE
    out += struct.pack("<HdII", FORMAT_VERSION, float(weight),
                       int(example_count), len(grads))
    for name in sorted(grads):
        arr = np.ascontiguousarray(grads[name], dtype="<f4")
        nb = name.encode("utf-8")
        out += struct.pack("<H", len(nb))
        out += nb
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    blob = bytes(out)
    assert len(blob) == update_size(grads)
    return blob


def decode_update(blob: bytes) -> tuple[dict[str, np.ndarray], float, int]:
    view = memoryview(blob)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(blob):
            raise DecodeError("truncated update")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC_UPDATE:
        raise DecodeError("bad update magic")
    version, weight, example_count, count = struct.unpack("<HdII", take(18))
    if version != FORMAT_VERSION:
        raise DecodeError(f"unsupported update version {version}")
    grads: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        raw = take(4 * math.prod(shape))
        grads[name] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape)
    if pos != len(blob):
        raise DecodeError("trailing bytes after update")
    return grads, weight, example_count


def wrap_transport(body: bytes | Payload, compressed: bool) -> bytes:
    """Frame bytes for the wire: flag byte, body length, then the body."""
    raw = body.data if isinstance(body, Payload) else bytes(body)
    if compressed:
        enc = zlib.compress(raw, 6)
        return struct.pack("<BQ", TRANSPORT_ZLIB, len(enc)) + enc
    return struct.pack("<BQ", TRANSPORT_RAW, len(raw)) + raw


def unwrap_transport(blob: bytes) -> bytes:
    if len(blob) < TRANSPORT_OVERHEAD:
        raise DecodeError("truncated transport frame")
    flag, length = struct.unpack_from("<BQ", blob, 0)
    body = blob[TRANSPORT_OVERHEAD:]
    if len(body) != length:
        raise DecodeError("transport length mismatch")
    if flag == TRANSPORT_RAW:
        return body
    if flag == TRANSPORT_ZLIB:
        try:
            return zlib.decompress(body)
        except zlib.error as exc:
            raise DecodeError(f"corrupt compressed body: {exc}") from None
    raise DecodeError(f"unknown transport flag {flag}")


def measure_transport(payload: Payload | bytes, compressed: bool) -> int:
    """On-wire byte count for the framed payload."""
    return len(wrap_transport(payload, compressed))
