"""
The streaming convolution engine
================================

``conv_stream`` consumes each input pixel once, caches K rows in a rotating
set of line buffers, slides a K x K window across them and hands each window
to 2**n MAC units, each owning a slice of the output channels. The result is
checked against a direct-form oracle.
"""

import numpy as np

from squeezejet.accel import (
    ConvParams,
    EngineProbe,
    LayerParams,
    LineBufferSet,
    PixelStream,
    conv_l0,
    conv_stream,
    output_dims,
)
from squeezejet.fxp import ACT_FORMAT, PARAM_FORMAT
from squeezejet.quant import reference_conv_fixed
from squeezejet.tensor import FmapTensor

rng = np.random.default_rng(7)

# the rotation table decides which physical line receives the next row
itb = LineBufferSet(3, width=5, channels=2)
for _ in range(4):
    print("rotation", itb.rot, "write target", itb.target)
    itb.shift()

p = LayerParams(height=9, width=7, in_channels=32, out_channels=16, kernel=3, pad=1)
params = ConvParams(
    rng.integers(-128, 128, p.weight_shape), rng.integers(-128, 128, p.out_channels),
    PARAM_FORMAT, PARAM_FORMAT,
)
x = FmapTensor(rng.integers(-2000, 2000, (p.height, p.width, p.in_channels)), ACT_FORMAT)
expected = reference_conv_fixed(p, params, x)

for n in range(4):
    probe = EngineProbe()
    stream = PixelStream.from_tensor(x)
    out = conv_stream(p, params, stream, n, probe=probe)
    y = out.to_tensor(*output_dims(p))
    print(f"{2**n} MAC units: bit-exact={y.same_as(expected)}, "
          f"pixels read={stream.reads}, written={out.writes}")

# the first layer has 3 channels and stride 2, so it runs on its own engine
p0 = LayerParams(15, 15, 3, 8, 3, stride=2)
params0 = ConvParams(rng.integers(-128, 128, p0.weight_shape), rng.integers(-128, 128, 8),
                     PARAM_FORMAT, PARAM_FORMAT)
img = FmapTensor(rng.integers(-500, 500, (15, 15, 3)), ACT_FORMAT)
y0 = conv_l0(p0, params0, PixelStream.from_tensor(img)).to_tensor(*output_dims(p0))
print("first layer", img.shape, "->", y0.shape,
      "bit-exact:", y0.same_as(reference_conv_fixed(p0, params0, img)))
