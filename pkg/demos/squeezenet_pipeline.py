"""
SqueezeNet v1.1 end to end
==========================

Builds the v1.1 graph, fills it with random weights, quantizes it and runs one
227 x 227 image through the fixed-point engines and through the float64
reference. With random weights the class scores mean nothing; the point is the
dim chain, the per-layer stream counts and the fixed-vs-float gap.
"""

import time

import numpy as np

from squeezejet import (
    FmapTensor,
    quantize_model,
    random_float_model,
    run_inference,
    run_inference_float,
    squeezenet_v11,
    top_k,
)

spec = squeezenet_v11()
for name, shape_in, shape_out in spec.validate():
    print(f"{name:16s} {shape_in} -> {shape_out}")
print(f"conv workload {spec.conv_ops() / 1e9:.4f} GOP (1 MAC = 2 ops)")

rng = np.random.default_rng(1)
model = quantize_model(random_float_model(spec, rng))
image = FmapTensor(rng.uniform(-1, 1, (227, 227, 3)))

trace = []
start = time.perf_counter()
fixed = run_inference(model, image, n=3, trace=trace)
print(f"fixed-point run: {time.perf_counter() - start:.1f} s")
real = run_inference_float(model, image)

for entry in trace:
    for c in entry.streams:
        print(f"{c.slot:24s} reads {c.reads:6d} writes {c.writes:6d}")

print("top-5 fixed", top_k(fixed).tolist(), "float", top_k(real).tolist())
print("max |p_fixed - p_float|", np.abs(fixed - real).max())
