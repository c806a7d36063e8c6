"""Functional simulator of the SqueezeJet fixed-point convolution accelerator.

The package models the streaming line-buffered convolution engine bit-exactly,
runs SqueezeNet v1.1 end to end on it, and provides float and direct-form
reference convolutions plus an analytic cycle/buffer model.
"""

from .accel import (
    CI_MIN,
    ConvParams,
    EngineProbe,
    GeometryError,
    LayerParams,
    LineBufferSet,
    PixelStream,
    StreamUnderrun,
    WindowBuffer,
    conv_l0,
    conv_stream,
    output_dims,
    run_layer,
    split_weights,
)
from .fxp import (
    ACT_FORMAT,
    PARAM_FORMAT,
    Accumulator,
    FixedFormat,
    FixedWord,
    dequantize,
    finalize,
    mac_group,
    quantize,
)
from .layers import concat_channels, fixed2float, float2fixed, global_avgpool, maxpool, softmax
from .netgraph import FireSpec, GraphBuilder, LayerNode, Model, NetworkSpec, ShapeError, squeezenet_v11
from .pipeline import run_fire, run_inference, run_inference_float, top_k
from .quant import quantize_model, random_float_model, reference_conv_fixed, reference_conv_float
from .serialize import load_model, load_tensor, save_model, save_tensor
from .tensor import FmapTensor

__all__ = [
    "ACT_FORMAT",
    "Accumulator",
    "CI_MIN",
    "ConvParams",
    "EngineProbe",
    "FireSpec",
    "FixedFormat",
    "FixedWord",
    "FmapTensor",
    "GeometryError",
    "GraphBuilder",
    "LayerNode",
    "LayerParams",
    "LineBufferSet",
    "Model",
    "NetworkSpec",
    "PARAM_FORMAT",
    "PixelStream",
    "ShapeError",
    "StreamUnderrun",
    "WindowBuffer",
    "concat_channels",
    "conv_l0",
    "conv_stream",
    "dequantize",
    "finalize",
    "fixed2float",
    "float2fixed",
    "global_avgpool",
    "load_model",
    "load_tensor",
    "mac_group",
    "maxpool",
    "output_dims",
    "quantize",
    "quantize_model",
    "random_float_model",
    "reference_conv_fixed",
    "reference_conv_float",
    "run_fire",
    "run_inference",
    "run_inference_float",
    "run_layer",
    "save_model",
    "save_tensor",
    "softmax",
    "split_weights",
    "squeezenet_v11",
    "top_k",
]

__version__ = "0.1.0"
