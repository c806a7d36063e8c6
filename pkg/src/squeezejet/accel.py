"""Functional model of the SqueezeJet streaming convolution engine.

Data moves through the engine the way it does in hardware:

* input pixels (all channels of one (y, x) location) arrive on a FIFO and are
  read exactly once, in raster order;
* a :class:`LineBufferSet` caches K input rows; a rotation table picks which
  physical line is the top/bottom of the window, so shifting down one row
  moves no data;
* each MAC unit owns a :class:`WindowBuffer` (K x K x C_i) that takes one new
  column per horizontal step;
* the 2**n MAC units each hold an equal slice of the output kernels and work
  on the same window, writing their channels into one output pixel.

Padding is never read from the input stream. The engine writes zero pixels
into the line buffers for padding rows and feeds zero columns into the window
for padding columns.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

import numpy as np

from .fxp import FixedFormat, check_raw, finalize_array, mac_lanes
from .tensor import FmapTensor

CI_MIN = 16


class GeometryError(ValueError):
    """Layer geometry or parameter shapes are inconsistent."""


class StreamUnderrun(RuntimeError):
    """A consumer read from an exhausted pixel stream."""


@dataclass(frozen=True)
class LayerParams:
    """Geometry of one convolution layer.

    ``height``/``width``/``in_channels`` describe the input fmap; ``kernel`` is
    square; ``pad`` pixels of zeros are added on every side.
    """

    height: int
    width: int
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    pad: int = 0
    relu: bool = True

    def __post_init__(self):
        for name in ("height", "width", "in_channels", "out_channels", "kernel", "stride"):
            if getattr(self, name) < 1:
                raise GeometryError(f"{name} must be positive, got {getattr(self, name)}")
        if self.pad < 0:
            raise GeometryError(f"pad must be non-negative, got {self.pad}")

    @property
    def out_dims(self) -> tuple[int, int]:
        return output_dims(self)

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.kernel, self.kernel, self.in_channels)

    @property
    def macs(self) -> int:
        yo, xo = self.out_dims
        return yo * xo * self.out_channels * self.kernel * self.kernel * self.in_channels


def output_dims(p: LayerParams) -> tuple[int, int]:
    dims = []
    for size in (p.height, p.width):
        span = size - p.kernel + 2 * p.pad
        if span < 0 or span % p.stride:
            raise GeometryError(
                f"extent {size} with kernel {p.kernel}, pad {p.pad}, "
                f"stride {p.stride} does not tile evenly"
            )
        dims.append(span // p.stride + 1)
    return dims[0], dims[1]


@dataclass(eq=False)
class ConvParams:
    """Weights in (c_o, k_h, k_w, c_i) order plus one bias per output channel.

    Quantized parameters hold raw integers and their formats; real-valued
    parameters have ``weight_fmt = bias_fmt = None``.
    """

    weights: np.ndarray
    bias: np.ndarray
    weight_fmt: Optional[FixedFormat] = None
    bias_fmt: Optional[FixedFormat] = None

    def __post_init__(self):
        if (self.weight_fmt is None) != (self.bias_fmt is None):
            raise TypeError("weights and bias must both be fixed or both be real")
        dtype = np.float64 if self.weight_fmt is None else np.int64
        self.weights = np.asarray(self.weights).astype(dtype, copy=False)
        self.bias = np.asarray(self.bias).astype(dtype, copy=False)
        if self.weight_fmt is not None:
            check_raw(self.weights, self.weight_fmt)
            check_raw(self.bias, self.bias_fmt)

    @property
    def is_fixed(self) -> bool:
        return self.weight_fmt is not None

    def check(self, p: LayerParams) -> None:
        if self.weights.shape != p.weight_shape:
            raise GeometryError(f"weights {self.weights.shape} != expected {p.weight_shape}")
        if self.bias.shape != (p.out_channels,):
            raise GeometryError(f"bias {self.bias.shape} != expected ({p.out_channels},)")


class PixelStream:
    """FIFO of pixels (``channels`` raw words each) with read/write counters.

    A stream may be backed by a lazy ``source`` iterator; pixels are then pulled
    from the producer only when the consumer asks for them.
    """

    def __init__(self, channels: int, fmt: FixedFormat, source: Optional[Iterable] = None):
        self.channels = channels
        self.fmt = fmt
        self.reads = 0
        self.writes = 0
        self._fifo: deque = deque()
        self._source: Optional[Iterator] = iter(source) if source is not None else None

    def push(self, pixel) -> None:
        pixel = np.asarray(pixel, dtype=np.int64)
        if pixel.shape != (self.channels,):
            raise ValueError(f"pixel has shape {pixel.shape}, stream carries {self.channels} channels")
        self._fifo.append(pixel)
        self.writes += 1

    def pop(self) -> np.ndarray:
        if not self._fifo and self._source is not None:
            try:
                self.push(next(self._source))
            except StopIteration:
                self._source = None
        if not self._fifo:
            raise StreamUnderrun(f"stream exhausted after {self.reads} reads")
        self.reads += 1
        return self._fifo.popleft()

    def __len__(self):
        """Pixels buffered and not yet read (excludes a lazy producer's backlog)."""
        return len(self._fifo)

    @classmethod
    def from_tensor(cls, t: FmapTensor) -> "PixelStream":
        if not t.is_fixed:
            raise TypeError("streams carry fixed-point pixels")
        y, x, c = t.shape
        s = cls(c, t.fmt)
        for pixel in t.data.reshape(y * x, c):
            s.push(pixel)
        return s

    def to_tensor(self, height: int, width: int) -> FmapTensor:
        """Drain ``height * width`` pixels into a fmap."""
        out = np.empty((height * width, self.channels), dtype=np.int64)
        for i in range(height * width):
            out[i] = self.pop()
        return FmapTensor(out.reshape(height, width, self.channels), self.fmt)


class LineBufferSet:
    """K line buffers addressed through a rotation index table.

    ``rot[0]`` is the physical line holding the top window row and ``rot[-1]``
    the bottom one. :meth:`shift` rotates the table so the oldest line becomes
    the bottom line and the only write target.
    """

    def __init__(self, k: int, width: int, channels: int):
        self.k = k
        self.width = width
        self.channels = channels
        self.lines = np.zeros((k, width, channels), dtype=np.int64)
        self.rot = list(range(k))
        self.line_writes = [0] * k
        self.pixel_writes = 0
        self.pad_writes = 0

    @property
    def capacity(self) -> int:
        return self.k * self.width * self.channels

    @property
    def target(self) -> int:
        return self.rot[-1]

    def shift(self) -> None:
        self.rot = self.rot[1:] + self.rot[:1]

    def write_pixel(self, x: int, pixel, padding: bool = False) -> None:
        if not 0 <= x < self.width:
            raise IndexError(f"column {x} outside line of width {self.width}")
        self.lines[self.target, x] = pixel
        self.line_writes[self.target] += 1
        if padding:
            self.pad_writes += 1
        else:
            self.pixel_writes += 1

    def read_column(self, x: int) -> np.ndarray:
        """Column ``x`` of all K lines in window order, shape (K, channels)."""
        if not 0 <= x < self.width:
            raise IndexError(f"column {x} outside line of width {self.width}")
        return self.lines[self.rot, x]


class WindowBuffer:
    """K x K x C window stored as K column slots with a rotation table."""

    def __init__(self, k: int, channels: int):
        self.k = k
        self.channels = channels
        self.cols = np.zeros((k, k, channels), dtype=np.int64)  # slot, k_h, c
        self.rot = list(range(k))  # slots from left to right

    def shift_column(self, col) -> None:
        col = np.asarray(col, dtype=np.int64)
        if col.size != self.k * self.channels:
            raise ValueError(f"column needs {self.k * self.channels} words, got {col.size}")
        slot = self.rot[0]
        self.cols[slot] = col.reshape(self.k, self.channels)
        self.rot = self.rot[1:] + [slot]

    def window(self) -> np.ndarray:
        """Logical window, shape (k_h, k_w, c)."""
        return self.cols[self.rot].transpose(1, 0, 2)


def split_weights(weights: np.ndarray, n: int) -> list[np.ndarray]:
    """Split kernels into ``2**n`` equal, contiguous output-channel groups."""
    groups = 1 << n
    if weights.shape[0] % groups:
        raise GeometryError(f"{weights.shape[0]} output channels do not split into {groups} groups")
    return np.split(weights, groups, axis=0)


@dataclass
class EngineProbe:
    """Optional hook exposing an engine's internal buffers after a run."""

    itb: Optional[LineBufferSet] = None
    windows: list = field(default_factory=list)
    pixels_out: int = 0


class _Units:
    """The 2**n MAC units: kernel slice, bias slice and output-channel range each."""

    def __init__(self, params: ConvParams, n: int, in_fmt: FixedFormat,
                 out_fmt: FixedFormat, relu: bool, ci_min: int):
        groups = split_weights(params.weights, n)
        self.kernels = [g.reshape(g.shape[0], -1) for g in groups]
        self.bias = np.split(params.bias, len(groups))
        size = params.weights.shape[0] // len(groups)
        self.ranges = [slice(i * size, (i + 1) * size) for i in range(len(groups))]
        self.acc_frac = in_fmt.frac_bits + params.weight_fmt.frac_bits
        self.bias_fmt = params.bias_fmt
        self.out_fmt = out_fmt
        self.relu = relu
        self.ci_min = ci_min
        self.c_out = params.weights.shape[0]

    def __len__(self):
        return len(self.kernels)

    def compute(self, g: int, window: np.ndarray, out: np.ndarray) -> None:
        acc = mac_lanes(window.reshape(-1), self.kernels[g], self.ci_min)
        out[self.ranges[g]] = finalize_array(
            acc, self.acc_frac, self.bias[g], self.bias_fmt, self.out_fmt, self.relu
        )


def _check_common(p: LayerParams, params: ConvParams, fmap_in: PixelStream):
    output_dims(p)
    params.check(p)
    if not params.is_fixed:
        raise TypeError("engines need quantized parameters")
    if fmap_in.channels != p.in_channels:
        raise GeometryError(f"stream carries {fmap_in.channels} channels, layer expects {p.in_channels}")


def _finish(gen, p: LayerParams, out_fmt: FixedFormat, lazy: bool) -> PixelStream:
    if lazy:
        return PixelStream(p.out_channels, out_fmt, source=gen)
    out = PixelStream(p.out_channels, out_fmt)
    for pixel in gen:
        out.push(pixel)
    return out


def conv_stream(
    p: LayerParams,
    params: ConvParams,
    fmap_in: PixelStream,
    n: int = 0,
    *,
    out_fmt: Optional[FixedFormat] = None,
    ci_min: int = CI_MIN,
    lazy: bool = False,
    probe: Optional[EngineProbe] = None,
) -> PixelStream:
    """Stride-1 convolution with fused ReLU, K in {1, 3}.

    Returns the output pixel stream. With ``lazy=True`` no input is consumed
    until output pixels are read, which lets layers be chained as a pipeline.
    The output format defaults to the input stream's format.
    """
    _check_common(p, params, fmap_in)
    if p.stride != 1:
        raise GeometryError("conv_stream supports stride 1 only; use conv_l0")
    if p.kernel not in (1, 3):
        raise GeometryError(f"conv_stream supports 1x1 and 3x3 kernels, got {p.kernel}")
    if p.in_channels % ci_min:
        raise GeometryError(f"in_channels {p.in_channels} is not a multiple of ci_min={ci_min}")
    out_fmt = out_fmt or fmap_in.fmt
    units = _Units(params, n, fmap_in.fmt, out_fmt, p.relu, ci_min)
    if p.kernel == 1:
        gen = _pointwise_rows(p, units, fmap_in, probe)
    else:
        gen = _line_buffered_rows(p, units, fmap_in, probe)
    return _finish(gen, p, out_fmt, lazy)


def _pointwise_rows(p, units, fmap_in, probe):
    yo_n, xo_n = output_dims(p)
    zero = np.zeros(p.in_channels, dtype=np.int64)
    for yo in range(yo_n):
        y = yo - p.pad
        for xo in range(xo_n):
            x = xo - p.pad
            real = 0 <= y < p.height and 0 <= x < p.width
            pixel = fmap_in.pop() if real else zero
            out = np.empty(units.c_out, dtype=np.int64)
            for g in range(len(units)):
                units.compute(g, pixel, out)
            if probe is not None:
                probe.pixels_out += 1
            yield out


def _line_buffered_rows(p, units, fmap_in, probe):
    k, pad, width = p.kernel, p.pad, p.width
    yo_n, xo_n = output_dims(p)
    itb = LineBufferSet(k, width, p.in_channels)
    windows = [WindowBuffer(k, p.in_channels) for _ in range(len(units))]
    if probe is not None:
        probe.itb, probe.windows = itb, windows
    zero_pixel = np.zeros(p.in_channels, dtype=np.int64)
    zero_col = np.zeros((k, p.in_channels), dtype=np.int64)

    def load(prow, x):
        if 0 <= prow - pad < p.height:
            itb.write_pixel(x, fmap_in.pop())
        else:
            itb.write_pixel(x, zero_pixel, padding=True)

    def column(pcol):
        x = pcol - pad
        return itb.read_column(x) if 0 <= x < width else zero_col

    # initialization: fill the top K-1 window rows
    for prow in range(k - 1):
        itb.shift()
        for x in range(width):
            load(prow, x)

    for yo in range(yo_n):
        bottom = yo + k - 1
        itb.shift()
        # pre-load the first window columns of the new bottom row
        for pcol in range(k - 1):
            if 0 <= pcol - pad < width:
                load(bottom, pcol - pad)
        for pcol in range(k - 1):
            col = column(pcol)
            for wb in windows:
                wb.shift_column(col)
        for xo in range(xo_n):
            pcol = xo + k - 1
            if 0 <= pcol - pad < width:
                load(bottom, pcol - pad)
            col = column(pcol)
            out = np.empty(units.c_out, dtype=np.int64)
            for g, wb in enumerate(windows):
                wb.shift_column(col)
                units.compute(g, wb.window(), out)
            if probe is not None:
                probe.pixels_out += 1
            yield out


def conv_l0(
    p: LayerParams,
    params: ConvParams,
    fmap_in: PixelStream,
    n: int = 0,
    *,
    out_fmt: Optional[FixedFormat] = None,
    ci_min: int = CI_MIN,
    lazy: bool = False,
    probe: Optional[EngineProbe] = None,
) -> PixelStream:
    """First-layer engine: any stride, any kernel size, any channel count.

    Input channels are zero-padded up to a multiple of ``ci_min`` so the same
    MAC-group datapath is used. Whole input rows are buffered; for each output
    row the line buffers advance ``stride`` rows.
    """
    _check_common(p, params, fmap_in)
    out_fmt = out_fmt or fmap_in.fmt
    c_pad = -(-p.in_channels // ci_min) * ci_min
    extra = c_pad - p.in_channels
    padded = ConvParams(
        np.pad(params.weights, ((0, 0), (0, 0), (0, 0), (0, extra))),
        params.bias,
        params.weight_fmt,
        params.bias_fmt,
    )
    units = _Units(padded, n, fmap_in.fmt, out_fmt, p.relu, ci_min)
    gen = _strided_rows(p, units, c_pad, fmap_in, probe)
    return _finish(gen, p, out_fmt, lazy)


def _strided_rows(p, units, c_pad, fmap_in, probe):
    k, s, pad, width = p.kernel, p.stride, p.pad, p.width
    yo_n, xo_n = output_dims(p)
    itb = LineBufferSet(k, width, c_pad)
    if probe is not None:
        probe.itb = itb
    zero_pixel = np.zeros(c_pad, dtype=np.int64)
    buf = np.zeros(c_pad, dtype=np.int64)
    loaded = 0  # padded rows pushed through the line buffers so far

    for yo in range(yo_n):
        while loaded < yo * s + k:
            itb.shift()
            real = 0 <= loaded - pad < p.height
            for x in range(width):
                if real:
                    buf[: p.in_channels] = fmap_in.pop()
                    itb.write_pixel(x, buf)
                else:
                    itb.write_pixel(x, zero_pixel, padding=True)
            loaded += 1
        window = np.zeros((k, k, c_pad), dtype=np.int64)
        for xo in range(xo_n):
            for kw in range(k):
                x = xo * s + kw - pad
                window[:, kw] = itb.read_column(x) if 0 <= x < width else 0
            out = np.empty(units.c_out, dtype=np.int64)
            for g in range(len(units)):
                units.compute(g, window, out)
            if probe is not None:
                probe.pixels_out += 1
            yield out


def run_layer(
    p: LayerParams,
    params: ConvParams,
    t: FmapTensor,
    n: int = 0,
    *,
    first_layer: bool = False,
    ci_min: int = CI_MIN,
    out_fmt: Optional[FixedFormat] = None,
):
    """Stream a whole fmap through an engine.

    Returns ``(output fmap, input stream, output stream)``; the streams carry
    the read/write counters.
    """
    if t.shape != (p.height, p.width, p.in_channels):
        raise GeometryError(f"input fmap {t.shape} does not match layer {p}")
    engine = conv_l0 if first_layer else conv_stream
    s_in = PixelStream.from_tensor(t)
    s_out = engine(p, params, s_in, n, ci_min=ci_min, out_fmt=out_fmt)
    yo, xo = output_dims(p)
    return s_out.to_tensor(yo, xo), s_in, s_out
