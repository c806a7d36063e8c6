"""Non-convolution layers of the SqueezeNet pipeline."""

from __future__ import annotations

import math

import numpy as np

from .fxp import FixedFormat, dequantize_array, quantize_array
from .tensor import FmapTensor


def pool_dims(size: int, k: int, s: int, ceil_mode: bool = False) -> int:
    """Output extent of a ``k``-wide, stride-``s`` unpadded pooling window.

    ``ceil_mode`` keeps a final partial window (Caffe semantics).
    """
    if size < k:
        raise ValueError(f"pool window {k} larger than input {size}")
    span = size - k
    steps = math.ceil(span / s) if ceil_mode else span // s
    return steps + 1


def maxpool(t: FmapTensor, k: int, s: int, ceil_mode: bool = False) -> FmapTensor:
    """Per-channel window maximum.

    Fixed maps are compared on raw values, which is order-preserving within a
    single format.
    """
    y, x, c = t.shape
    yo, xo = pool_dims(y, k, s, ceil_mode), pool_dims(x, k, s, ceil_mode)
    fill = np.iinfo(np.int64).min if t.is_fixed else -np.inf
    # pad so that partial trailing windows (ceil mode) see only real data
    py, px = (yo - 1) * s + k - y, (xo - 1) * s + k - x
    src = np.pad(t.data, ((0, max(py, 0)), (0, max(px, 0)), (0, 0)), constant_values=fill)
    out = None
    for dy in range(k):
        for dx in range(k):
            win = src[dy : dy + (yo - 1) * s + 1 : s, dx : dx + (xo - 1) * s + 1 : s]
            out = win.copy() if out is None else np.maximum(out, win)
    return FmapTensor(out, t.fmt)


def fixed2float(t: FmapTensor) -> FmapTensor:
    if not t.is_fixed:
        raise TypeError("fixed2float needs a fixed-valued fmap")
    return FmapTensor(dequantize_array(t.data, t.fmt))


def float2fixed(t: FmapTensor, fmt: FixedFormat) -> FmapTensor:
    if t.is_fixed:
        raise TypeError("float2fixed needs a real-valued fmap")
    return FmapTensor(quantize_array(t.data, fmt), fmt)


def global_avgpool(t: FmapTensor) -> np.ndarray:
    if t.is_fixed:
        raise TypeError("global_avgpool runs on real values; convert with fixed2float")
    y, x, c = t.shape
    if y * x == 0:
        raise ValueError("cannot average an empty fmap")
    return t.data.reshape(y * x, c).mean(axis=0)


def softmax(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("softmax of an empty vector")
    e = np.exp(v - v.max())
    return e / e.sum()


def concat_channels(a: FmapTensor, b: FmapTensor) -> FmapTensor:
    if a.shape[:2] != b.shape[:2]:
        raise ValueError(f"spatial dims differ: {a.shape[:2]} vs {b.shape[:2]}")
    if a.fmt != b.fmt:
        raise ValueError(f"element kinds differ: {a.fmt} vs {b.fmt}")
    return FmapTensor(np.concatenate([a.data, b.data], axis=2), a.fmt)
