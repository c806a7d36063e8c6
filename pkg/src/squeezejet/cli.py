"""Command-line front end.

Exit codes: 0 success, 1 usage, 2 I/O or file-format error, 3 verification
mismatch.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import perf
from .accel import GeometryError
from .fxp import ACT_FORMAT, PARAM_FORMAT, FixedFormat
from .netgraph import Model, ShapeError, squeezenet_v11
from .pipeline import run_inference, run_inference_float, top_k
from .quant import dequantize_params, quantize_model, saturation_counts
from .serialize import SerializationError, load_model, load_tensor, save_model, save_tensor
from .tensor import FmapTensor

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_MISMATCH = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_IO):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _Out:
    def __init__(self, as_json: bool):
        self.as_json = as_json

    def record(self, text: str, **fields):
        if self.as_json:
            print(json.dumps(fields, default=_jsonable))
        else:
            print(text)


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, tuple):
        return list(v)
    return str(v)


def _fmt_arg(text):
    try:
        return FixedFormat.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _load_model(path) -> Model:
    try:
        return load_model(path)
    except OSError as exc:
        raise CliError(f"cannot read model {path}: {exc.strerror or exc}") from None
    except SerializationError as exc:
        raise CliError(f"{path}: {type(exc).__name__}: {exc}") from None


def _load_tensor(path) -> FmapTensor:
    try:
        return load_tensor(path)
    except OSError as exc:
        raise CliError(f"cannot read tensor {path}: {exc.strerror or exc}") from None
    except SerializationError as exc:
        raise CliError(f"{path}: {type(exc).__name__}: {exc}") from None


def _write(fn, obj, path):
    try:
        fn(obj, path)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc.strerror or exc}") from None


# ---------------------------------------------------------------------------


def cmd_quantize(args, out: _Out) -> int:
    model = _load_model(args.input)
    if model.is_fixed:
        # requantizing is idempotent for unchanged formats
        model = Model(model.spec, {k: dequantize_params(v) for k, v in model.params.items()})
    counts = saturation_counts(model, args.wfmt, args.bfmt)
    for slot, (nw, nb) in counts.items():
        out.record(f"{slot:28s} saturated weights {nw:6d}  biases {nb:4d}",
                   slot=slot, saturated_weights=nw, saturated_biases=nb)
    q = quantize_model(model, args.wfmt, args.afmt, args.bfmt)
    _write(save_model, q, args.out)
    total = sum(a + b for a, b in counts.values())
    out.record(f"wrote {args.out}: weights {args.wfmt}, activations {args.afmt}, "
               f"{total} saturated parameters", out=str(args.out), weight_format=str(args.wfmt),
               act_format=str(args.afmt), saturated=total)
    return EXIT_OK


def _dump_name(i, name):
    return f"{i:02d}_{re.sub(r'[^A-Za-z0-9]+', '_', name).strip('_')}.sqjt"


def cmd_infer(args, out: _Out) -> int:
    model = _load_model(args.model)
    x = _load_tensor(args.input)
    if x.is_fixed:
        x = FmapTensor(x.values())
    if not model.is_fixed and not args.float_ref:
        raise CliError("model is not quantized; quantize it or pass --float-ref")
    trace = [] if args.dump_fmaps else None
    try:
        fixed = run_inference(model, x, args.parallel, trace=trace) if model.is_fixed else None
        ref = run_inference_float(model, x) if args.float_ref else None
    except (ShapeError, GeometryError) as exc:
        raise CliError(f"shape mismatch: {exc}") from None
    result = ref if args.float_ref else fixed
    _write(save_tensor, FmapTensor(result.reshape(1, 1, -1)), args.out)
    if trace is not None:
        d = Path(args.dump_fmaps)
        d.mkdir(parents=True, exist_ok=True)
        for i, entry in enumerate(trace):
            t = entry.output if isinstance(entry.output, FmapTensor) else FmapTensor(entry.output.reshape(1, 1, -1))
            _write(save_tensor, t, d / _dump_name(i, entry.name))
    best = top_k(result, 5)
    out.record(f"top-5 {list(map(int, best))}  p={result[best[0]]:.6f}",
               top5=[int(i) for i in best], top1_prob=float(result[best[0]]),
               engine="float" if args.float_ref else "fixed")
    if fixed is not None and ref is not None:
        f1, r1 = int(top_k(fixed, 1)[0]), int(top_k(ref, 1)[0])
        diff = float(np.abs(fixed - ref).max())
        out.record(f"fixed vs float: top-1 {f1} vs {r1} ({'agree' if f1 == r1 else 'DISAGREE'}), "
                   f"max |dp| {diff:.3g}", fixed_top1=f1, float_top1=r1,
                   top1_agree=f1 == r1, max_abs_diff=diff)
    return EXIT_OK


def cmd_compare(args, out: _Out) -> int:
    a, b = _load_tensor(args.a), _load_tensor(args.b)
    if a.shape != b.shape:
        raise CliError(f"dims mismatch: {a.shape} vs {b.shape}")
    d = np.abs(a.values() - b.values())
    exact = a.same_as(b)
    out.record(f"max |diff| {d.max() if d.size else 0.0:.6g}  mean |diff| {d.mean() if d.size else 0.0:.6g}  "
               f"{'bit-exact' if exact else 'NOT bit-exact'}",
               max_abs_diff=float(d.max()) if d.size else 0.0,
               mean_abs_diff=float(d.mean()) if d.size else 0.0, bit_exact=exact)
    return EXIT_OK if exact else EXIT_MISMATCH


def _spec_for(args):
    if args.model:
        return _load_model(args.model).spec
    return squeezenet_v11(args.input_size)


def cmd_shapes(args, out: _Out) -> int:
    spec = _spec_for(args)
    shape = tuple(spec.input_shape)
    for node in spec.layers:
        try:
            if tuple(node.in_shape) != shape:
                raise ShapeError(f"expects input {node.in_shape}, previous layer gives {shape}")
            new = node.out_shape()
        except (GeometryError, ValueError) as exc:
            msg = str(exc)
            if not msg.startswith(node.name):
                msg = f"{node.name}: {msg}"
            out.record(f"FAIL {msg}", layer=node.name, ok=False, error=msg)
            return EXIT_MISMATCH
        out.record(f"{node.name:18s} {'x'.join(map(str, shape)):>12s} -> {'x'.join(map(str, new))}",
                   layer=node.name, kind=node.kind, input=shape, output=new, ok=True)
        shape = new
    out.record(f"ok: {'x'.join(map(str, spec.input_shape))} -> {'x'.join(map(str, shape))}",
               ok=True, input=tuple(spec.input_shape), output=shape)
    return EXIT_OK


def cmd_perf(args, out: _Out) -> int:
    spec = _spec_for(args)
    try:
        cfg = perf.HwConfig(ci_min=args.ci_min, units=args.units, clock_mhz=args.clock,
                            pipeline_fill=args.pipeline_fill, row_overhead=args.row_overhead,
                            per_pixel_overhead=args.pixel_overhead, bram_bits=args.bram_bits)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    try:
        spec.validate()
    except GeometryError as exc:
        raise CliError(f"shape chain violation: {exc}", EXIT_MISMATCH) from None
    report = perf.estimate_network(spec.slots(), cfg, args.act_bits, args.w_bits)
    if not out.as_json:
        print(f"{'layer':28s} {'cycles':>10s} {'ideal':>10s} {'ITB bits':>9s} "
              f"{'ITWB/unit':>9s} {'weights':>9s} bram")
    for est, fp in zip(report.layers, report.footprints):
        out.record(
            f"{est.name:28s} {est.cycles:10d} {est.ideal_cycles:10.0f} {fp.itb:9d} "
            f"{fp.itwb_per_unit:9d} {fp.weights:9d} {'OVER' if fp.exceeds_bram else 'ok'}",
            layer=est.name, cycles=est.cycles, ideal_cycles=est.ideal_cycles, macs=est.macs,
            itb_bits=fp.itb, itwb_bits_per_unit=fp.itwb_per_unit, weight_bits=fp.weights,
            bias_bits=fp.bias, output_pixel_bits=fp.output_pixel, exceeds_bram=fp.exceeds_bram,
        )
    out.record(
        f"total: {report.total_cycles} cycles (ideal {report.ideal_cycles:.0f}), "
        f"{report.total_ms:.3f} ms at {cfg.clock_mhz:g} MHz, {report.ops / 1e9:.4f} GOP workload, "
        f"{report.gops:.3f} GOPs modelled",
        total_cycles=report.total_cycles, ideal_cycles=report.ideal_cycles,
        total_ms=report.total_ms, workload_gop=report.ops / 1e9, throughput_gops=report.gops,
    )
    peak = report.peak_buffers()
    out.record("peak buffers (bits): " + ", ".join(f"{k} {v:.0f}" for k, v in peak.items()),
               peak_buffers=peak)
    out.record(
        f"reference (8 x MAC-16 design @ 100 MHz): conv latency {perf.REFERENCE_CONV_LATENCY_MS:g} ms, "
        f"throughput {perf.REFERENCE_THROUGHPUT_GOPS:g} GOPs, workload {perf.REFERENCE_WORKLOAD_GOPS:g} GOP",
        reference_conv_latency_ms=perf.REFERENCE_CONV_LATENCY_MS,
        reference_throughput_gops=perf.REFERENCE_THROUGHPUT_GOPS,
        reference_workload_gop=perf.REFERENCE_WORKLOAD_GOPS,
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="squeezejet", description=__doc__.splitlines()[0])
    parser.add_argument("--json", action="store_true", help="one JSON object per output record")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    q = sub.add_parser("quantize", help="quantize a real-valued SQJM model")
    q.add_argument("--in", dest="input", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--wfmt", type=_fmt_arg, default=PARAM_FORMAT, help="weight format total:frac")
    q.add_argument("--afmt", type=_fmt_arg, default=ACT_FORMAT, help="activation format total:frac")
    q.add_argument("--bfmt", type=_fmt_arg, default=None, help="bias format (default: weight format)")
    q.set_defaults(func=cmd_quantize)

    i = sub.add_parser("infer", help="run the network on one input tensor")
    i.add_argument("--model", required=True)
    i.add_argument("--input", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--float-ref", action="store_true",
                   help="write the float64 reference result and compare it with the fixed engine")
    i.add_argument("--parallel", type=int, default=0, choices=range(0, 4), metavar="N",
                   help="use 2**N MAC units (0-3)")
    i.add_argument("--dump-fmaps", metavar="DIR", help="write every intermediate fmap as SQJT")
    i.set_defaults(func=cmd_infer)

    c = sub.add_parser("compare", help="diff two SQJT tensors")
    c.add_argument("--a", required=True)
    c.add_argument("--b", required=True)
    c.set_defaults(func=cmd_compare)

    for name, func, helptext in (
        ("shapes", cmd_shapes, "print and check the layer dim chain"),
        ("perf", cmd_perf, "cycle and buffer model report"),
    ):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--model", help="SQJM model (default: built-in SqueezeNet v1.1)")
        s.add_argument("--input-size", type=int, default=227, help="built-in graph input size")
        s.set_defaults(func=func)
        if name == "perf":
            s.add_argument("--units", type=int, default=8)
            s.add_argument("--ci-min", type=int, default=16)
            s.add_argument("--clock", type=float, default=100.0, help="MHz")
            s.add_argument("--pipeline-fill", type=int, default=0)
            s.add_argument("--row-overhead", type=int, default=0)
            s.add_argument("--pixel-overhead", type=int, default=0)
            s.add_argument("--bram-bits", type=int, default=None)
            s.add_argument("--act-bits", type=int, default=16)
            s.add_argument("--w-bits", type=int, default=8)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, _Out(args.json))
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
