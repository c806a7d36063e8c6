"""
Cycle and buffer model
======================

An analytic estimate for the accelerator: every MAC unit retires one 16-lane
group per cycle, so a layer costs about ceil(C_o/units) * K^2 * ceil(C_i/16)
cycles per output pixel. Sweeping the unit count shows the expected scaling;
the buffer model reports what each layer needs on chip.
"""

from squeezejet.netgraph import squeezenet_v11
from squeezejet.perf import (
    REFERENCE_CONV_LATENCY_MS,
    REFERENCE_THROUGHPUT_GOPS,
    HwConfig,
    estimate_network,
)

slots = list(squeezenet_v11().slots())

for units in (1, 2, 4, 8, 16):
    r = estimate_network(slots, HwConfig(units=units))
    print(f"{units:2d} units: {r.total_cycles:9d} cycles, {r.total_ms:7.2f} ms, {r.gops:6.2f} GOPs")

# overheads are free parameters; this one adds 40 cycles per output pixel
r = estimate_network(slots, HwConfig(units=8, per_pixel_overhead=40))
print(f"with pixel overhead: {r.total_ms:.1f} ms")
print(f"reference hardware: {REFERENCE_CONV_LATENCY_MS} ms, {REFERENCE_THROUGHPUT_GOPS} GOPs")

r = estimate_network(slots, HwConfig(units=8, bram_bits=600_000))
for est, fp in zip(r.layers, r.footprints):
    flag = "over budget" if fp.exceeds_bram else ""
    print(f"{est.name:24s} ITB {fp.itb:7d}  ITWB/unit {fp.itwb_per_unit:6d}  weights {fp.weights:8d} {flag}")
print("peak", r.peak_buffers())
