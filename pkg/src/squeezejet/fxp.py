"""Two's-complement fixed-point arithmetic.

Scalar types (:class:`FixedWord`, :class:`Accumulator`) carry the exact
semantics; the ``*_array`` variants apply the same rules elementwise to numpy
``int64`` arrays of raw values and are what the engines use.

Rounding is round-to-nearest with ties away from zero. Quantization and
finalization saturate; accumulation is exact and never rounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

ACC_BITS = 64
ACC_MIN = -(1 << (ACC_BITS - 1))
ACC_MAX = (1 << (ACC_BITS - 1)) - 1


@dataclass(frozen=True)
class FixedFormat:
    """Signed Q-format with ``total_bits`` bits, ``frac_bits`` of them fractional.

    The sign bit counts toward the integer bits, so ``FixedFormat(8, 7)`` spans
    [-1, 127/128] and ``FixedFormat(16, 3)`` spans [-4096, 4095.875].
    """

    total_bits: int
    frac_bits: int

    def __post_init__(self):
        if not 1 <= self.total_bits <= 32:
            raise ValueError(f"total_bits must be in [1, 32], got {self.total_bits}")
        if not 0 <= self.frac_bits < self.total_bits:
            raise ValueError(
                f"frac_bits must be in [0, {self.total_bits}), got {self.frac_bits}"
            )

    @property
    def raw_min(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def raw_max(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def lsb(self) -> float:
        return 2.0 ** -self.frac_bits

    @property
    def min_value(self) -> float:
        return self.raw_min * self.lsb

    @property
    def max_value(self) -> float:
        return self.raw_max * self.lsb

    @classmethod
    def parse(cls, text: str) -> "FixedFormat":
        """Parse ``"total:frac"``, e.g. ``"8:7"``."""
        try:
            total, frac = (int(part) for part in text.split(":"))
        except ValueError:
            raise ValueError(f"expected format 'total:frac', got {text!r}") from None
        return cls(total, frac)

    def __str__(self):
        return f"{self.total_bits}:{self.frac_bits}"


# The formats used throughout the SqueezeNet pipeline.
PARAM_FORMAT = FixedFormat(8, 7)
ACT_FORMAT = FixedFormat(16, 3)


@dataclass(frozen=True)
class FixedWord:
    raw: int
    fmt: FixedFormat

    def __post_init__(self):
        if not self.fmt.raw_min <= self.raw <= self.fmt.raw_max:
            raise OverflowError(f"raw value {self.raw} does not fit in {self.fmt}")

    @property
    def value(self) -> float:
        return dequantize(self)


@dataclass(frozen=True)
class Accumulator:
    """Wide running sum of products, scaled by ``2**-frac_bits``."""

    raw: int = 0
    frac_bits: int = 0

    def __post_init__(self):
        if not ACC_MIN <= self.raw <= ACC_MAX:
            raise OverflowError(f"accumulator overflow: {self.raw}")

    @property
    def value(self) -> float:
        return self.raw * 2.0 ** -self.frac_bits


def _round_half_away(x: float) -> int:
    # floor-based so that values just under .5 (e.g. 0.49999999999999994) stay put
    a = abs(x)
    whole = math.floor(a)
    r = whole + (1 if a - whole >= 0.5 else 0)
    return -r if x < 0 else r


def quantize(value: float, fmt: FixedFormat) -> FixedWord:
    if math.isnan(value):
        raise ValueError("cannot quantize NaN")
    scaled = value * (1 << fmt.frac_bits)
    if scaled >= fmt.raw_max + 1:
        return FixedWord(fmt.raw_max, fmt)
    if scaled <= fmt.raw_min - 1:
        return FixedWord(fmt.raw_min, fmt)
    raw = _round_half_away(scaled)
    return FixedWord(min(max(raw, fmt.raw_min), fmt.raw_max), fmt)


def dequantize(w: FixedWord) -> float:
    return math.ldexp(w.raw, -w.fmt.frac_bits)


def mac_group(
    acts: Sequence[FixedWord], wts: Sequence[FixedWord], acc: Accumulator
) -> Accumulator:
    """One issue of a MAC unit: add ``sum(acts[i] * wts[i])`` to ``acc`` exactly."""
    if len(acts) != len(wts):
        raise ValueError(f"length mismatch: {len(acts)} activations, {len(wts)} weights")
    if not acts:
        return acc
    act_fmt = acts[0].fmt
    wt_fmt = wts[0].fmt
    if any(a.fmt != act_fmt for a in acts) or any(w.fmt != wt_fmt for w in wts):
        raise ValueError("all activations (and all weights) must share one format")
    if acc.frac_bits != act_fmt.frac_bits + wt_fmt.frac_bits:
        raise ValueError(
            f"accumulator scale {acc.frac_bits} != "
            f"{act_fmt.frac_bits} + {wt_fmt.frac_bits}"
        )
    total = acc.raw + sum(a.raw * w.raw for a, w in zip(acts, wts))
    return Accumulator(total, acc.frac_bits)


def shift_round(raw: int, shift: int) -> int:
    """Divide by ``2**shift`` rounding half away from zero (left shift if negative)."""
    if shift <= 0:
        return raw << -shift
    half = 1 << (shift - 1)
    if raw >= 0:
        return (raw + half) >> shift
    return -((-raw + half) >> shift)


def saturate(raw: int, fmt: FixedFormat) -> int:
    return min(max(raw, fmt.raw_min), fmt.raw_max)


def finalize(
    acc: Accumulator, bias: FixedWord, out_fmt: FixedFormat, apply_relu: bool
) -> FixedWord:
    """Add bias, apply optional ReLU at full precision, round and saturate to ``out_fmt``."""
    if acc.frac_bits < bias.fmt.frac_bits or acc.frac_bits < out_fmt.frac_bits:
        raise ValueError("accumulator must be at least as fine as bias and output")
    total = acc.raw + (bias.raw << (acc.frac_bits - bias.fmt.frac_bits))
    if apply_relu and total < 0:
        total = 0
    out = shift_round(total, acc.frac_bits - out_fmt.frac_bits)
    return FixedWord(saturate(out, out_fmt), out_fmt)


# ---------------------------------------------------------------------------
# array variants (raw int64 values)
# ---------------------------------------------------------------------------


def quantize_array(values, fmt: FixedFormat) -> np.ndarray:
    x = np.asarray(values, dtype=np.float64)
    if np.isnan(x).any():
        raise ValueError("cannot quantize NaN")
    scaled = np.clip(x * float(1 << fmt.frac_bits), fmt.raw_min - 1.0, fmt.raw_max + 1.0)
    a = np.abs(scaled)
    whole = np.floor(a)
    r = whole + (a - whole >= 0.5)
    r = np.where(scaled < 0, -r, r)
    return np.clip(r, fmt.raw_min, fmt.raw_max).astype(np.int64)


def dequantize_array(raw, fmt: FixedFormat) -> np.ndarray:
    return np.ldexp(np.asarray(raw, dtype=np.float64), -fmt.frac_bits)


def saturation_count(values, fmt: FixedFormat) -> int:
    """Number of elements that fall outside the representable range of ``fmt``."""
    x = np.asarray(values, dtype=np.float64) * float(1 << fmt.frac_bits)
    return int(np.count_nonzero((x >= fmt.raw_max + 0.5) | (x < fmt.raw_min - 0.5)))


def check_raw(raw: np.ndarray, fmt: FixedFormat) -> None:
    if raw.size and (raw.min() < fmt.raw_min or raw.max() > fmt.raw_max):
        raise OverflowError(f"raw values outside {fmt}")


def mac_lanes(acts: np.ndarray, wts: np.ndarray, ci_min: int) -> np.ndarray:
    """Exact dot products issued as a sequence of ``ci_min``-lane MAC groups.

    ``acts`` is a flat window of L raw activations and ``wts`` has shape (G, L)
    (one row per output channel). L must be a multiple of ``ci_min``. Each
    ``ci_min`` block is one MAC-group issue; the block partial sums are
    accumulated in int64.
    """
    acts = np.asarray(acts, dtype=np.int64).reshape(-1)
    wts = np.asarray(wts, dtype=np.int64)
    lanes = acts.shape[0]
    if wts.shape[-1] != lanes:
        raise ValueError(f"length mismatch: {lanes} activations, {wts.shape[-1]} weights")
    if lanes % ci_min:
        raise ValueError(f"{lanes} lanes is not a multiple of ci_min={ci_min}")
    blocks = lanes // ci_min
    prods = wts.reshape(-1, blocks, ci_min) * acts.reshape(blocks, ci_min)
    return prods.sum(axis=2).sum(axis=1)


def shift_round_array(raw: np.ndarray, shift: int) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.int64)
    if shift <= 0:
        return raw << -shift
    half = np.int64(1 << (shift - 1))
    mag = (np.abs(raw) + half) >> shift
    return np.where(raw < 0, -mag, mag)


def finalize_array(
    acc_raw: np.ndarray,
    acc_frac: int,
    bias_raw: np.ndarray,
    bias_fmt: FixedFormat,
    out_fmt: FixedFormat,
    apply_relu: bool,
) -> np.ndarray:
    """Elementwise :func:`finalize`; ``bias_raw`` broadcasts over the last axis."""
    if acc_frac < bias_fmt.frac_bits or acc_frac < out_fmt.frac_bits:
        raise ValueError("accumulator must be at least as fine as bias and output")
    total = np.asarray(acc_raw, dtype=np.int64) + (
        np.asarray(bias_raw, dtype=np.int64) << (acc_frac - bias_fmt.frac_bits)
    )
    if apply_relu:
        total = np.maximum(total, 0)
    out = shift_round_array(total, acc_frac - out_fmt.frac_bits)
    return np.clip(out, out_fmt.raw_min, out_fmt.raw_max)
