"""
Fixed-point words, MAC groups and output rounding
=================================================

Parameters are 8-bit words with 7 fractional bits, activations are 16-bit
words with 3 fractional bits. This walks through quantizing reals, one
16-lane multiply-accumulate and the final rounding back to an activation.
"""

import numpy as np

from squeezejet.fxp import (
    ACT_FORMAT,
    PARAM_FORMAT,
    Accumulator,
    dequantize_array,
    finalize,
    mac_group,
    quantize,
    quantize_array,
)

print("parameter range", PARAM_FORMAT.min_value, "..", PARAM_FORMAT.max_value, "step", PARAM_FORMAT.lsb)
print("activation range", ACT_FORMAT.min_value, "..", ACT_FORMAT.max_value, "step", ACT_FORMAT.lsb)

# rounding is to nearest with ties away from zero; out-of-range values saturate
for x in (0.5, 0.0625, -0.0625, 1.0, -3.0):
    w = quantize(x, PARAM_FORMAT)
    print(f"{x:>8} -> raw {w.raw:4d} -> {w.value}")

# the worst round-trip error is half a step
rng = np.random.default_rng(0)
x = rng.uniform(ACT_FORMAT.min_value, ACT_FORMAT.max_value, 100_000)
err = np.abs(dequantize_array(quantize_array(x, ACT_FORMAT), ACT_FORMAT) - x)
print("max activation round-trip error", err.max(), "bound", ACT_FORMAT.lsb / 2)

# one MAC-16 group: the accumulator is exact and carries 3 + 7 = 10 fraction bits
acts = [quantize(v, ACT_FORMAT) for v in rng.uniform(-4, 4, 16)]
wts = [quantize(v, PARAM_FORMAT) for v in rng.uniform(-0.5, 0.5, 16)]
acc = mac_group(acts, wts, Accumulator(0, 10))
print("accumulator", acc.raw, "=", acc.value)

# bias is aligned to the accumulator, ReLU applied, then rounded to an activation
bias = quantize(0.25, PARAM_FORMAT)
for a in (acc, Accumulator(-acc.raw, 10)):
    for relu in (False, True):
        out = finalize(a, bias, ACT_FORMAT, relu)
        print(f"acc {a.value:+.4f} relu={relu}: raw {out.raw} -> {out.value}")
