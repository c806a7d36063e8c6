"""End-to-end SqueezeNet execution on the fixed-point engines or the float reference."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .accel import CI_MIN, ConvParams, LayerParams, run_layer
from .layers import concat_channels, fixed2float, float2fixed, global_avgpool, maxpool, softmax
from .netgraph import FireSpec, LayerNode, Model, ShapeError
from .quant import dequantize_params, reference_conv_float
from .tensor import FmapTensor


@dataclass
class StreamCount:
    slot: str
    layer: LayerParams
    reads: int
    writes: int


@dataclass
class TraceEntry:
    """Output of one graph node, plus stream counters for each conv it ran."""

    name: str
    kind: str
    output: Union[FmapTensor, np.ndarray]
    streams: list[StreamCount] = field(default_factory=list)


class _FixedRunner:
    def __init__(self, n: int, ci_min: int):
        self.n = n
        self.ci_min = ci_min

    def conv(self, slot, p, params, t, first_layer=False, counts=None):
        # the 2**n split must divide the output channels; small layers use fewer units
        n = self.n
        while n and p.out_channels % (1 << n):
            n -= 1
        out, s_in, s_out = run_layer(p, params, t, n, first_layer=first_layer, ci_min=self.ci_min)
        if counts is not None:
            counts.append(StreamCount(slot, p, s_in.reads, s_out.writes))
        return out


class _FloatRunner:
    def conv(self, slot, p, params, t, first_layer=False, counts=None):
        return reference_conv_float(p, dequantize_params(params), t)


def run_fire(
    fire: FireSpec,
    t: FmapTensor,
    params: Sequence[ConvParams],
    n: int = 0,
    *,
    ci_min: int = CI_MIN,
    counts: Optional[list] = None,
    _runner=None,
    _name: str = "fire",
) -> FmapTensor:
    """Squeeze 1x1, then expand 1x1 and expand 3x3 (pad 1) concatenated on channels."""
    runner = _runner or _FixedRunner(n, ci_min)
    sq_p, e1_p, e3_p = fire.convs(*t.shape)
    sq_w, e1_w, e3_w = params
    squeezed = runner.conv(f"{_name}/squeeze1x1", sq_p, sq_w, t, counts=counts)
    left = runner.conv(f"{_name}/expand1x1", e1_p, e1_w, squeezed, counts=counts)
    right = runner.conv(f"{_name}/expand3x3", e3_p, e3_w, squeezed, counts=counts)
    return concat_channels(left, right)


def _run_node(node: LayerNode, model: Model, x, runner, fixed: bool, trace):
    counts: list[StreamCount] = []
    if node.kind == "conv":
        slot, p = node.slots()[0]
        out = runner.conv(slot, p, model.params[slot], x, node.first_layer, counts)
    elif node.kind == "fire":
        params = [model.params[s] for s, _ in node.slots()]
        out = run_fire(node.fire, x, params, counts=counts, _runner=runner, _name=node.name)
    elif node.kind == "maxpool":
        out = maxpool(x, node.kernel, node.stride, node.ceil_mode)
    elif node.kind == "fixed2float":
        out = fixed2float(x) if fixed else x
    elif node.kind == "global_avgpool":
        out = FmapTensor(global_avgpool(x).reshape(1, 1, -1))
    elif node.kind == "softmax":
        out = FmapTensor(softmax(x.data.reshape(-1)).reshape(1, 1, -1))
    else:  # pragma: no cover - LayerNode rejects unknown kinds
        raise ValueError(node.kind)
    if out.shape != node.out_shape():
        raise ShapeError(f"{node.name}: produced {out.shape}, expected {node.out_shape()}")
    if trace is not None:
        trace.append(TraceEntry(node.name, node.kind, out, counts))
    return out


def _prepare(model: Model, x: FmapTensor):
    if x.is_fixed:
        raise TypeError("network input must be a real-valued fmap")
    if x.shape != tuple(model.spec.input_shape):
        raise ShapeError(f"input {x.shape} does not match network entry {model.spec.input_shape}")
    model.spec.validate()
    model.check()


def run_inference(
    model: Model,
    x: FmapTensor,
    n: int = 0,
    *,
    ci_min: int = CI_MIN,
    trace: Optional[list] = None,
) -> np.ndarray:
    """Class probabilities from the fixed-point engines.

    The real input is quantized to the model's activation format, every
    convolution streams through ``conv_l0``/``conv_stream`` with ``2**n`` MAC
    units, and the tail (average pool, softmax) runs in float64.
    """
    if not model.is_fixed:
        raise TypeError("run_inference needs a quantized model; see run_inference_float")
    _prepare(model, x)
    t = float2fixed(x, model.act_fmt)
    if trace is not None:
        trace.append(TraceEntry("input", "float2fixed", t))
    runner = _FixedRunner(n, ci_min)
    for node in model.spec.layers:
        t = _run_node(node, model, t, runner, True, trace)
    return _as_vector(t)


def run_inference_float(model: Model, x: FmapTensor, *, trace: Optional[list] = None) -> np.ndarray:
    """Same graph with every convolution evaluated by the float64 reference.

    Quantized parameters are dequantized, so against :func:`run_inference` this
    isolates the effect of activation quantization and rounding.
    """
    _prepare(model, x)
    t = x
    runner = _FloatRunner()
    for node in model.spec.layers:
        t = _run_node(node, model, t, runner, False, trace)
    return _as_vector(t)


def _as_vector(t: FmapTensor) -> np.ndarray:
    return t.values().reshape(-1) if t.shape[:2] == (1, 1) else t.values()


def top_k(probs: np.ndarray, k: int = 5) -> np.ndarray:
    """Indices of the ``k`` largest entries, best first (ties broken by index)."""
    order = np.lexsort((np.arange(probs.size), -probs))
    return order[:k]
