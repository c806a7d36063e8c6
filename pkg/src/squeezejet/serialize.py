"""SQJM model files and SQJT tensor files (little-endian throughout).

SQJM::

    "SQJM" | u32 version=1 | u32 record count
    per record:
        u8 kind | u32 Y_i, X_i, C_i, C_o, K, S, P, flags
        u8 weight total bits, weight frac bits, bias total bits, bias frac bits
        weights in (c_o, k_h, k_w, c_i) order, then biases

A fire module is stored as three consecutive records (squeeze, expand 1x1,
expand 3x3). Parameter words are signed integers of 1, 2 or 4 bytes depending
on the total bit width (8-bit parameters are plain signed bytes). A total
width of 64 with 0 fractional bits marks a real-valued model whose parameters
are float64. Layers without parameters record widths of 0.

``flags``: bit 0 fused ReLU, bit 1 first-layer engine, bit 2 ceil-mode
pooling, bits 8-15 activation total bits, bits 16-23 activation frac bits.

SQJT::

    "SQJT" | u32 version=1 | u8 dtype (0 real64, 1 fixed16, 2 fixed8)
    | u8 frac bits | u32 Y, X, C | payload in (y, x, c) order
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .accel import ConvParams, GeometryError, LayerParams
from .fxp import FixedFormat
from .netgraph import FIRE_SLOTS, LayerNode, Model, NetworkSpec, layer_name
from .tensor import FmapTensor

VERSION = 1
MODEL_MAGIC = b"SQJM"
TENSOR_MAGIC = b"SQJT"

KIND_TAGS = {
    "conv": 0,
    "fire/squeeze1x1": 1,
    "fire/expand1x1": 2,
    "fire/expand3x3": 3,
    "maxpool": 4,
    "fixed2float": 5,
    "global_avgpool": 6,
    "softmax": 7,
}
TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}

FLAG_RELU = 1
FLAG_FIRST_LAYER = 2
FLAG_CEIL = 4
REAL_WIDTH = 64

_RECORD = struct.Struct("<B8I4B")
_TENSOR_HEADER = struct.Struct("<4sIBB3I")
_DTYPES = {0: None, 1: 16, 2: 8}

PathLike = Union[str, Path]


class SerializationError(ValueError):
    pass


class BadMagicError(SerializationError):
    pass


class UnsupportedVersionError(SerializationError):
    pass


class TruncatedFileError(SerializationError):
    pass


class ModelGeometryError(SerializationError):
    pass


class ParameterCountError(SerializationError):
    pass


def _word_dtype(total_bits: int) -> np.dtype:
    if total_bits == REAL_WIDTH:
        return np.dtype("<f8")
    if 1 <= total_bits <= 8:
        return np.dtype("i1")
    if total_bits <= 16:
        return np.dtype("<i2")
    if total_bits <= 32:
        return np.dtype("<i4")
    raise ParameterCountError(f"unsupported parameter width {total_bits}")


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFileError(
                f"file truncated: needed {n} bytes at offset {self.pos}, {len(self.buf) - self.pos} left"
            )
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, s: struct.Struct):
        return s.unpack(self.take(s.size))

    def array(self, dtype: np.dtype, count: int) -> np.ndarray:
        return np.frombuffer(self.take(dtype.itemsize * count), dtype=dtype, count=count)


def _header(magic: bytes, r: _Reader):
    got = r.take(4)
    if got != magic:
        raise BadMagicError(f"bad magic {got!r}, expected {magic!r}")
    (version,) = struct.unpack("<I", r.take(4))
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


def _act_flags(fmt: Optional[FixedFormat]) -> int:
    return 0 if fmt is None else (fmt.total_bits << 8) | (fmt.frac_bits << 16)


def _conv_record(tag, p: LayerParams, params: ConvParams, extra_flags: int, act_fmt) -> bytes:
    flags = extra_flags | (FLAG_RELU if p.relu else 0) | _act_flags(act_fmt)
    if params.is_fixed:
        wt, wf = params.weight_fmt.total_bits, params.weight_fmt.frac_bits
        bt, bf = params.bias_fmt.total_bits, params.bias_fmt.frac_bits
    else:
        wt, wf, bt, bf = REAL_WIDTH, 0, REAL_WIDTH, 0
    head = _RECORD.pack(tag, p.height, p.width, p.in_channels, p.out_channels,
                        p.kernel, p.stride, p.pad, flags, wt, wf, bt, bf)
    w = params.weights.astype(_word_dtype(wt)).tobytes()
    b = params.bias.astype(_word_dtype(bt)).tobytes()
    return head + w + b


def model_to_bytes(m: Model) -> bytes:
    m.check()
    records = []
    for node in m.spec.layers:
        if node.kind == "conv":
            slot, p = node.slots()[0]
            flags = FLAG_FIRST_LAYER if node.first_layer else 0
            records.append(_conv_record(0, p, m.params[slot], flags, m.act_fmt))
        elif node.kind == "fire":
            for i, (slot, p) in enumerate(node.slots()):
                records.append(_conv_record(1 + i, p, m.params[slot], 0, m.act_fmt))
        else:
            y, x, c = node.in_shape
            flags = _act_flags(m.act_fmt) | (FLAG_CEIL if node.ceil_mode else 0)
            k, s = (node.kernel, node.stride) if node.kind == "maxpool" else (1, 1)
            records.append(_RECORD.pack(KIND_TAGS[node.kind], y, x, c, c, k, s, 0, flags, 0, 0, 0, 0))
    return MODEL_MAGIC + struct.pack("<II", VERSION, len(records)) + b"".join(records)


def _param_fmt(total, frac, what):
    if total == REAL_WIDTH and frac == 0:
        return None
    try:
        return FixedFormat(total, frac)
    except ValueError as exc:
        raise ParameterCountError(f"{what}: {exc}") from None


def model_from_bytes(buf: bytes) -> Model:
    r = _Reader(buf)
    _header(MODEL_MAGIC, r)
    (count,) = struct.unpack("<I", r.take(4))
    layers: list[LayerNode] = []
    params: dict[str, ConvParams] = {}
    act_fmt: Optional[FixedFormat] = None
    kinds: set[bool] = set()
    pending_fire: list = []

    for i in range(count):
        tag, y, x, c, co, k, s, pad, flags, wt, wf, bt, bf = r.unpack(_RECORD)
        if tag not in TAG_KINDS:
            raise ModelGeometryError(f"record {i}: unknown layer kind tag {tag}")
        kind = TAG_KINDS[tag]
        at, af = (flags >> 8) & 0xFF, (flags >> 16) & 0xFF
        if at:
            act_fmt = FixedFormat(at, af)
        is_conv = tag <= 3
        if is_conv:
            try:
                p = LayerParams(y, x, c, co, k, s, pad, bool(flags & FLAG_RELU))
            except GeometryError as exc:
                raise ModelGeometryError(f"record {i}: {exc}") from None
            wfmt = _param_fmt(wt, wf, f"record {i} weights")
            bfmt = _param_fmt(bt, bf, f"record {i} bias")
            if (wfmt is None) != (bfmt is None):
                raise ParameterCountError(f"record {i}: mixed real and fixed parameters")
            kinds.add(wfmt is not None)
            w = r.array(_word_dtype(wt), co * k * k * c).reshape(co, k, k, c)
            b = r.array(_word_dtype(bt), co)
            cp = ConvParams(w.copy(), b.copy(), wfmt, bfmt)
        elif (wt, wf, bt, bf) != (0, 0, 0, 0):
            raise ParameterCountError(f"record {i}: {kind} layer carries parameter widths")

        index = len(layers)
        if tag in (2, 3):
            expected = len(pending_fire) + 1
            if tag != expected:
                raise ModelGeometryError(f"record {i}: fire records out of order")
            pending_fire.append((p, cp))
            if tag == 3:
                convs = tuple(q for q, _ in pending_fire)
                sq = convs[0]
                node = LayerNode("fire", layer_name(index, "fire"),
                                 (sq.height, sq.width, sq.in_channels), convs=convs)
                try:
                    node.out_shape()
                except GeometryError as exc:
                    raise ModelGeometryError(f"record {i}: {exc}") from None
                for slot, (_, q) in zip(FIRE_SLOTS, pending_fire):
                    params[f"{node.name}/{slot}"] = q
                layers.append(node)
                pending_fire = []
            continue
        if pending_fire:
            raise ModelGeometryError(f"record {i}: incomplete fire module")
        if tag == 1:
            pending_fire = [(p, cp)]
            continue
        if tag == 0:
            name = layer_name(index, "conv")
            layers.append(LayerNode("conv", name, (y, x, c), convs=(p,),
                                    first_layer=bool(flags & FLAG_FIRST_LAYER)))
            params[name] = cp
        else:
            layers.append(LayerNode(kind, layer_name(index, kind), (y, x, c),
                                    kernel=k if kind == "maxpool" else 0,
                                    stride=s if kind == "maxpool" else 0,
                                    ceil_mode=bool(flags & FLAG_CEIL)))
    if pending_fire:
        raise ModelGeometryError("file ends inside a fire module")
    if r.pos != len(buf):
        raise ParameterCountError(f"{len(buf) - r.pos} trailing bytes after last record")
    if len(kinds) > 1:
        raise ParameterCountError("mixed real and fixed parameter records")
    if not layers:
        raise ModelGeometryError("model has no layers")
    if kinds == {False}:
        act_fmt = None
    spec = NetworkSpec(layers[0].in_shape, tuple(layers))
    return Model(spec, params, act_fmt)


def save_model(m: Model, path: PathLike) -> None:
    Path(path).write_bytes(model_to_bytes(m))


def load_model(path: PathLike) -> Model:
    return model_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# tensors
# ---------------------------------------------------------------------------


def tensor_to_bytes(t: FmapTensor) -> bytes:
    y, x, c = t.shape
    if t.fmt is None:
        dtype, frac, payload = 0, 0, t.data.astype("<f8")
    elif t.fmt.total_bits == 16:
        dtype, frac, payload = 1, t.fmt.frac_bits, t.data.astype("<i2")
    elif t.fmt.total_bits == 8:
        dtype, frac, payload = 2, t.fmt.frac_bits, t.data.astype("i1")
    else:
        raise SerializationError(f"SQJT stores 8- or 16-bit fixed words, not {t.fmt}")
    return _TENSOR_HEADER.pack(TENSOR_MAGIC, VERSION, dtype, frac, y, x, c) + payload.tobytes()


def tensor_from_bytes(buf: bytes) -> FmapTensor:
    r = _Reader(buf)
    _header(TENSOR_MAGIC, r)
    dtype, frac, y, x, c = struct.unpack("<BB3I", r.take(_TENSOR_HEADER.size - 8))
    if dtype not in _DTYPES:
        raise SerializationError(f"unknown SQJT dtype tag {dtype}")
    bits = _DTYPES[dtype]
    word = np.dtype("<f8") if bits is None else _word_dtype(bits)
    count = y * x * c
    have = (len(buf) - r.pos) // word.itemsize
    if have < count:
        raise TruncatedFileError(f"payload holds {have} elements, dims {y}x{x}x{c} need {count}")
    if len(buf) - r.pos != count * word.itemsize:
        raise ParameterCountError(f"payload length does not match dims {y}x{x}x{c}")
    data = r.array(word, count).reshape(y, x, c)
    if bits is None:
        return FmapTensor(data.astype(np.float64))
    try:
        fmt = FixedFormat(bits, frac)
    except ValueError as exc:
        raise SerializationError(str(exc)) from None
    return FmapTensor(data.astype(np.int64), fmt)


def save_tensor(t: FmapTensor, path: PathLike) -> None:
    Path(path).write_bytes(tensor_to_bytes(t))


def load_tensor(path: PathLike) -> FmapTensor:
    return tensor_from_bytes(Path(path).read_bytes())
