"""Network description: layer nodes, the SqueezeNet v1.1 graph, and models."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .accel import ConvParams, GeometryError, LayerParams, output_dims
from .fxp import FixedFormat
from .layers import pool_dims

KINDS = ("conv", "fire", "maxpool", "fixed2float", "global_avgpool", "softmax")
FIRE_SLOTS = ("squeeze1x1", "expand1x1", "expand3x3")


class ShapeError(GeometryError):
    """Consecutive layers do not chain."""


@dataclass(frozen=True)
class FireSpec:
    squeeze: int
    expand1x1: int
    expand3x3: int

    @property
    def out_channels(self) -> int:
        return self.expand1x1 + self.expand3x3

    def convs(self, height: int, width: int, in_channels: int) -> tuple[LayerParams, ...]:
        """Squeeze, expand-1x1 and expand-3x3 layers, all with fused ReLU."""
        return (
            LayerParams(height, width, in_channels, self.squeeze, 1),
            LayerParams(height, width, self.squeeze, self.expand1x1, 1),
            LayerParams(height, width, self.squeeze, self.expand3x3, 3, pad=1),
        )


@dataclass(frozen=True)
class LayerNode:
    kind: str
    name: str
    in_shape: tuple[int, int, int]
    convs: tuple[LayerParams, ...] = ()
    kernel: int = 0  # pooling window
    stride: int = 0
    ceil_mode: bool = True
    first_layer: bool = False  # run on the first-layer engine

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv" and len(self.convs) != 1:
            raise ValueError("a conv node holds exactly one LayerParams")
        if self.kind == "fire" and len(self.convs) != 3:
            raise ValueError("a fire node holds squeeze, expand1x1, expand3x3")

    @property
    def fire(self) -> Optional[FireSpec]:
        if self.kind != "fire":
            return None
        sq, e1, e3 = self.convs
        return FireSpec(sq.out_channels, e1.out_channels, e3.out_channels)

    def slots(self) -> list[tuple[str, LayerParams]]:
        """Parameter slots (name, geometry) of the convolutions in this node."""
        if self.kind == "conv":
            return [(self.name, self.convs[0])]
        if self.kind == "fire":
            return [(f"{self.name}/{s}", p) for s, p in zip(FIRE_SLOTS, self.convs)]
        return []

    def out_shape(self) -> tuple[int, int, int]:
        y, x, c = self.in_shape
        if self.kind == "conv":
            p = self.convs[0]
            if (p.height, p.width, p.in_channels) != self.in_shape:
                raise ShapeError(f"{self.name}: conv geometry {p} does not match input {self.in_shape}")
            return (*output_dims(p), p.out_channels)
        if self.kind == "fire":
            sq, e1, e3 = self.convs
            if (sq.height, sq.width, sq.in_channels) != self.in_shape:
                raise ShapeError(f"{self.name}: squeeze geometry does not match input {self.in_shape}")
            sq_out = (*output_dims(sq), sq.out_channels)
            for e in (e1, e3):
                if (e.height, e.width, e.in_channels) != sq_out:
                    raise ShapeError(f"{self.name}: expand input does not match squeeze output {sq_out}")
            d1, d3 = output_dims(e1), output_dims(e3)
            if d1 != d3:
                raise ShapeError(f"{self.name}: expand outputs differ spatially ({d1} vs {d3})")
            return (*d1, e1.out_channels + e3.out_channels)
        if self.kind == "maxpool":
            return (
                pool_dims(y, self.kernel, self.stride, self.ceil_mode),
                pool_dims(x, self.kernel, self.stride, self.ceil_mode),
                c,
            )
        if self.kind == "global_avgpool":
            return (1, 1, c)
        if self.kind == "softmax" and (y, x) != (1, 1):
            raise ShapeError(f"{self.name}: softmax needs a 1x1xC input, got {self.in_shape}")
        return self.in_shape


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple[int, int, int]
    layers: tuple[LayerNode, ...]

    def validate(self) -> list[tuple[str, tuple, tuple]]:
        """Check that every layer's input matches its predecessor's output.

        Returns the dim chain as ``(name, in_shape, out_shape)`` rows; raises
        :class:`ShapeError` naming the first failing layer.
        """
        chain = []
        shape = tuple(self.input_shape)
        for node in self.layers:
            if tuple(node.in_shape) != shape:
                raise ShapeError(f"{node.name}: expects input {node.in_shape}, previous layer gives {shape}")
            try:
                out = node.out_shape()
            except ShapeError:
                raise
            except (GeometryError, ValueError) as exc:
                raise ShapeError(f"{node.name}: {exc}") from exc
            chain.append((node.name, shape, out))
            shape = out
        return chain

    @property
    def output_shape(self) -> tuple[int, int, int]:
        return self.validate()[-1][2] if self.layers else self.input_shape

    def slots(self) -> Iterator[tuple[str, LayerParams]]:
        for node in self.layers:
            yield from node.slots()

    def conv_macs(self) -> int:
        return sum(p.macs for _, p in self.slots())

    def conv_ops(self, ops_per_mac: int = 2) -> int:
        """Convolution workload, counting one multiply-accumulate as ``ops_per_mac`` ops."""
        return ops_per_mac * self.conv_macs()


# (squeeze, expand1x1, expand3x3) of fire2..fire9
V11_FIRES = (
    (16, 64, 64),
    (16, 64, 64),
    (32, 128, 128),
    (32, 128, 128),
    (48, 192, 192),
    (48, 192, 192),
    (64, 256, 256),
    (64, 256, 256),
)


def layer_name(index: int, kind: str) -> str:
    return f"{index}:{kind}"


class GraphBuilder:
    """Appends layers while tracking the running fmap shape."""

    def __init__(self, input_shape):
        self.input_shape = tuple(input_shape)
        self.shape = self.input_shape
        self.layers: list[LayerNode] = []

    def add(self, kind, **kw) -> "GraphBuilder":
        node = LayerNode(kind, layer_name(len(self.layers), kind), self.shape, **kw)
        self.shape = node.out_shape()
        self.layers.append(node)
        return self

    def conv(self, c_out, k, stride=1, pad=0, relu=True, first_layer=False) -> "GraphBuilder":
        y, x, c = self.shape
        return self.add("conv", convs=(LayerParams(y, x, c, c_out, k, stride, pad, relu),),
                        first_layer=first_layer)

    def fire(self, squeeze, e1, e3) -> "GraphBuilder":
        return self.add("fire", convs=FireSpec(squeeze, e1, e3).convs(*self.shape))

    def maxpool(self, k=3, s=2, ceil_mode=True) -> "GraphBuilder":
        return self.add("maxpool", kernel=k, stride=s, ceil_mode=ceil_mode)

    def classifier_tail(self) -> "GraphBuilder":
        """fixed2float, global average pool, softmax."""
        return self.add("fixed2float").add("global_avgpool").add("softmax")

    def build(self) -> NetworkSpec:
        return NetworkSpec(self.input_shape, tuple(self.layers))


def squeezenet_v11(
    input_size: int = 227, num_classes: int = 1000, ceil_mode: bool = True
) -> NetworkSpec:
    """SqueezeNet v1.1 inference graph.

    Max pooling defaults to ceil mode (trailing partial windows kept), the
    Caffe behaviour, giving 113 -> 56 -> 28 -> 14 for a 227 input; with
    ``ceil_mode=False`` the chain is 113 -> 56 -> 27 -> 13.
    """
    b = GraphBuilder((input_size, input_size, 3))
    b.conv(64, 3, stride=2, first_layer=True)
    b.maxpool(3, 2, ceil_mode)
    for i, fire in enumerate(V11_FIRES):
        b.fire(*fire)
        if i in (1, 3):
            b.maxpool(3, 2, ceil_mode)
    b.conv(num_classes, 1)
    return b.classifier_tail().build()


@dataclass(eq=False)
class Model:
    """A network plus parameters for every convolution slot.

    ``act_fmt`` is the activation format used at run time; it is ``None`` for a
    real-valued (unquantized) model.
    """

    spec: NetworkSpec
    params: dict[str, ConvParams] = field(default_factory=dict)
    act_fmt: Optional[FixedFormat] = None

    @property
    def is_fixed(self) -> bool:
        return self.act_fmt is not None

    def check(self) -> None:
        for slot, p in self.spec.slots():
            if slot not in self.params:
                raise KeyError(f"missing parameters for {slot}")
            cp = self.params[slot]
            cp.check(p)
            if cp.is_fixed != self.is_fixed:
                raise TypeError(f"{slot}: parameter kind does not match model kind")

    def same_as(self, other: "Model") -> bool:
        if self.spec != other.spec or self.act_fmt != other.act_fmt:
            return False
        if self.params.keys() != other.params.keys():
            return False
        for k, a in self.params.items():
            b = other.params[k]
            if (a.weight_fmt, a.bias_fmt) != (b.weight_fmt, b.bias_fmt):
                return False
            if not (np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)):
                return False
        return True
