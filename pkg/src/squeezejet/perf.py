"""First-order cycle and on-chip memory model of the accelerator.

Each MAC unit is modelled as an initiation-interval-1 pipeline that retires
one ``ci_min``-lane group per cycle. A layer then costs::

    init + Y_o * (row_overhead + X_o * (pixel_overhead
                  + ceil(C_o / units) * K * K * ceil(C_i / ci_min)))

Overheads default to zero, which makes the estimate an optimistic bound; the
measured latency of the hardware is far higher, so its reference figures
are reported next to the model rather than fitted to it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .accel import LayerParams, output_dims

# Measured figures of the 8 x MAC-16 design at 100 MHz (reference lines only).
REFERENCE_CONV_LATENCY_MS = 175.0
REFERENCE_THROUGHPUT_GOPS = 4.43
REFERENCE_WORKLOAD_GOPS = 0.7755


@dataclass(frozen=True)
class HwConfig:
    ci_min: int = 16
    units: int = 8
    clock_mhz: float = 100.0
    pipeline_fill: int = 0  # one-off cycles per layer
    row_overhead: int = 0
    per_pixel_overhead: int = 0
    bram_bits: Optional[int] = None  # on-chip capacity for footprint checks
    ops_per_mac: int = 2

    def __post_init__(self):
        if self.ci_min < 1:
            raise ValueError("ci_min must be >= 1")
        if self.units < 1 or self.units & (self.units - 1):
            raise ValueError(f"units must be a power of two, got {self.units}")
        if self.clock_mhz <= 0:
            raise ValueError("clock must be positive")


@dataclass(frozen=True)
class LayerEstimate:
    name: str
    layer: LayerParams
    cycles: int
    ideal_cycles: float
    macs: int


@dataclass(frozen=True)
class Footprint:
    """Buffer sizes in bits for one layer."""

    itb: int
    itwb_per_unit: int
    weights: int
    weights_per_unit: float
    bias: int
    output_pixel: int
    units: int
    exceeds_bram: bool = False

    @property
    def total(self) -> float:
        return self.itb + self.units * self.itwb_per_unit + self.weights + self.bias + self.output_pixel


@dataclass
class PerfReport:
    config: HwConfig
    layers: list[LayerEstimate] = field(default_factory=list)
    footprints: list[Footprint] = field(default_factory=list)

    @property
    def total_cycles(self) -> int:
        return sum(e.cycles for e in self.layers)

    @property
    def ideal_cycles(self) -> float:
        return sum(e.ideal_cycles for e in self.layers)

    @property
    def total_macs(self) -> int:
        return sum(e.macs for e in self.layers)

    @property
    def total_ms(self) -> float:
        return self.total_cycles / (self.config.clock_mhz * 1e3)

    @property
    def ops(self) -> int:
        return self.config.ops_per_mac * self.total_macs

    @property
    def gops(self) -> float:
        """Modelled throughput in giga-operations per second."""
        seconds = self.total_ms / 1e3
        return self.ops / seconds / 1e9 if seconds else math.inf

    def peak_buffers(self) -> dict[str, float]:
        """Largest requirement per buffer class over all layers."""
        if not self.footprints:
            return {}
        keys = ("itb", "itwb_per_unit", "weights", "weights_per_unit", "bias", "output_pixel")
        return {k: max(getattr(f, k) for f in self.footprints) for k in keys}


def estimate_layer(p: LayerParams, cfg: HwConfig, name: str = "") -> LayerEstimate:
    yo, xo = output_dims(p)
    per_pixel = (
        math.ceil(p.out_channels / cfg.units)
        * p.kernel * p.kernel
        * math.ceil(p.in_channels / cfg.ci_min)
    )
    cycles = cfg.pipeline_fill + yo * (cfg.row_overhead + xo * (cfg.per_pixel_overhead + per_pixel))
    ideal = p.macs / (cfg.units * cfg.ci_min)
    return LayerEstimate(name, p, cycles, ideal, p.macs)


def footprint(
    p: LayerParams,
    cfg: HwConfig,
    act_bits: int = 16,
    w_bits: int = 8,
    b_bits: Optional[int] = None,
) -> Footprint:
    b_bits = w_bits if b_bits is None else b_bits
    k = p.kernel
    weights = p.out_channels * k * k * p.in_channels * w_bits
    fp = Footprint(
        itb=k * p.width * p.in_channels * act_bits,
        itwb_per_unit=k * k * p.in_channels * act_bits,
        weights=weights,
        weights_per_unit=weights / cfg.units,
        bias=p.out_channels * b_bits,
        output_pixel=p.out_channels * act_bits,
        units=cfg.units,
    )
    if cfg.bram_bits is not None and fp.total > cfg.bram_bits:
        fp = Footprint(**{**fp.__dict__, "exceeds_bram": True})
    return fp


def estimate_network(
    layers: Iterable[tuple[str, LayerParams]],
    cfg: HwConfig,
    act_bits: int = 16,
    w_bits: int = 8,
) -> PerfReport:
    report = PerfReport(cfg)
    for name, p in layers:
        report.layers.append(estimate_layer(p, cfg, name))
        report.footprints.append(footprint(p, cfg, act_bits, w_bits))
    return report
