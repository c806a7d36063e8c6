"""Model quantization and the two reference convolutions.

The references evaluate the convolution sum directly on a zero-padded array,
with no line buffers or streams. The fixed-point reference accumulates exactly
in int64 and shares :func:`finalize_array` with the engines, so a mismatch
against an engine points at the dataflow rather than the arithmetic policy.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .accel import ConvParams, LayerParams, output_dims
from .fxp import (
    ACT_FORMAT,
    PARAM_FORMAT,
    FixedFormat,
    dequantize_array,
    finalize_array,
    quantize_array,
    saturation_count,
)
from .netgraph import Model, NetworkSpec
from .tensor import FmapTensor


def quantize_params(
    params: ConvParams, weight_fmt: FixedFormat, bias_fmt: Optional[FixedFormat] = None
) -> ConvParams:
    if params.is_fixed:
        raise TypeError("parameters are already quantized")
    bias_fmt = bias_fmt or weight_fmt
    return ConvParams(
        quantize_array(params.weights, weight_fmt),
        quantize_array(params.bias, bias_fmt),
        weight_fmt,
        bias_fmt,
    )


def dequantize_params(params: ConvParams) -> ConvParams:
    if not params.is_fixed:
        return params
    return ConvParams(
        dequantize_array(params.weights, params.weight_fmt),
        dequantize_array(params.bias, params.bias_fmt),
    )


def quantize_model(
    model: Model,
    weight_fmt: FixedFormat = PARAM_FORMAT,
    act_fmt: FixedFormat = ACT_FORMAT,
    bias_fmt: Optional[FixedFormat] = None,
) -> Model:
    """Quantize every weight and bias; biases use ``weight_fmt`` unless given."""
    model.check()
    if model.is_fixed:
        raise TypeError("model is already quantized")
    params = {k: quantize_params(v, weight_fmt, bias_fmt) for k, v in model.params.items()}
    return Model(model.spec, params, act_fmt)


def saturation_counts(
    model: Model, weight_fmt: FixedFormat = PARAM_FORMAT, bias_fmt: Optional[FixedFormat] = None
) -> dict[str, tuple[int, int]]:
    """Per slot, how many (weights, biases) would clip when quantized."""
    bias_fmt = bias_fmt or weight_fmt
    out = {}
    for slot, cp in model.params.items():
        w, b = (cp.weights, cp.bias) if not cp.is_fixed else (
            dequantize_array(cp.weights, cp.weight_fmt),
            dequantize_array(cp.bias, cp.bias_fmt),
        )
        out[slot] = (saturation_count(w, weight_fmt), saturation_count(b, bias_fmt))
    return out


def random_float_model(
    spec: NetworkSpec, rng: np.random.Generator, gain: float = 1.0, bias_scale: float = 0.05
) -> Model:
    """Real-valued model with He-style normal weights, for tests and demos."""
    params = {}
    for slot, p in spec.slots():
        fan_in = p.kernel * p.kernel * p.in_channels
        w = rng.normal(0.0, gain * np.sqrt(2.0 / fan_in), size=p.weight_shape)
        b = rng.normal(0.0, bias_scale, size=p.out_channels)
        params[slot] = ConvParams(w, b)
    return Model(spec, params)


def _padded(data: np.ndarray, pad: int) -> np.ndarray:
    return np.pad(data, ((pad, pad), (pad, pad), (0, 0)))


def _direct_sum(p: LayerParams, x: np.ndarray, w: np.ndarray, dtype) -> np.ndarray:
    yo, xo = output_dims(p)
    k, s = p.kernel, p.stride
    xp = _padded(x, p.pad)
    acc = np.zeros((yo, xo, p.out_channels), dtype=dtype)
    for kh in range(k):
        for kw in range(k):
            patch = xp[kh : kh + (yo - 1) * s + 1 : s, kw : kw + (xo - 1) * s + 1 : s, :]
            acc += patch @ w[:, kh, kw, :].T
    return acc


def _check(p: LayerParams, params: ConvParams, fmap: FmapTensor) -> None:
    params.check(p)
    if fmap.shape != (p.height, p.width, p.in_channels):
        raise ValueError(f"fmap {fmap.shape} does not match layer input")


def reference_conv_float(p: LayerParams, params: ConvParams, fmap: FmapTensor) -> FmapTensor:
    """Convolution + bias (+ ReLU) in float64 on real values.

    Quantized parameters or inputs are dequantized first.
    """
    params = dequantize_params(params)
    _check(p, params, fmap)
    out = _direct_sum(p, fmap.values(), params.weights, np.float64) + params.bias
    if p.relu:
        out = np.maximum(out, 0.0)
    return FmapTensor(out)


def reference_conv_fixed(
    p: LayerParams,
    params: ConvParams,
    fmap: FmapTensor,
    out_fmt: Optional[FixedFormat] = None,
) -> FmapTensor:
    """Bit-exact oracle for the engines: exact int64 sum, then finalize."""
    if not (params.is_fixed and fmap.is_fixed):
        raise TypeError("reference_conv_fixed needs quantized parameters and fmap")
    _check(p, params, fmap)
    out_fmt = out_fmt or fmap.fmt
    acc = _direct_sum(p, fmap.data, params.weights, np.int64)
    acc_frac = fmap.fmt.frac_bits + params.weight_fmt.frac_bits
    out = finalize_array(acc, acc_frac, params.bias, params.bias_fmt, out_fmt, p.relu)
    return FmapTensor(out, out_fmt)


def quantization_error_bound(
    p: LayerParams,
    params: ConvParams,
    fmap: FmapTensor,
    weight_fmt: FixedFormat,
    act_fmt: FixedFormat,
    out_fmt: FixedFormat,
    bias_fmt: Optional[FixedFormat] = None,
) -> np.ndarray:
    """Per-element worst-case |fixed - float| for a real layer quantized with these formats.

    Assumes no saturation. With per-element rounding errors e_w <= lsb_w/2 and
    e_x <= lsb_x/2, each product errs by at most |w| e_x + |x| e_w + e_w e_x;
    add the bias rounding and the output rounding (lsb_out/2). ReLU cannot
    enlarge the error.
    """
    bias_fmt = bias_fmt or weight_fmt
    ew, ex, eb = weight_fmt.lsb / 2, act_fmt.lsb / 2, bias_fmt.lsb / 2
    lin = LayerParams(p.height, p.width, p.in_channels, p.out_channels, p.kernel,
                      p.stride, p.pad, relu=False)
    ones_x = np.ones(fmap.shape)
    ones_w = np.ones(p.weight_shape)
    # zero padding taps are exact, so they carry no error
    sum_w = _direct_sum(lin, ones_x, np.abs(dequantize_params(params).weights), np.float64)
    sum_x = _direct_sum(lin, np.abs(fmap.values()), ones_w, np.float64)
    n_taps = _direct_sum(lin, ones_x, ones_w, np.float64)
    return sum_w * ex + sum_x * ew + n_taps * ew * ex + eb + out_fmt.lsb / 2
