"""Command-line front end: ``evalign <subcommand> ...``.

Exit codes: 0 success, 1 I/O or file-format failure, 2 validation failure,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import io as evio
from ._backend import BACKEND
from .cmm import CmmParams, cmm_forward
from .edum import EdumParams, edum_forward
from .errors import EvalignError, NonFiniteLoss, ParseError, ValidationError
from .events import DEFAULT_BINS, voxelize
from .motion import (
    EPS_CHARBONNIER,
    EPS_TIMESTAMP,
    LAMBDA_SMOOTH,
    FlowField,
    OptimizerConfig,
    deposited_mass,
    endpoint_error,
    event_mask,
    optimize_flow,
    render_iwe_rgb,
    splat_iwe,
    warp_events,
)
from .ssm import SSMParams, discretize, scan_chunked, selective_scan
from .synth import SceneSpec, generate

SCHEMA = "evalign/1"
EXIT_OK, EXIT_IO, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2, 3

# key -> (type, default); the keys accepted in --config files
CONFIG_KEYS = {
    "bins": (int, DEFAULT_BINS),
    "window_ms": (float, 50.0),
    "lambda1": (float, LAMBDA_SMOOTH),
    "eps": (float, EPS_TIMESTAMP),
    "eps_char": (float, EPS_CHARBONNIER),
    "lr": (float, 0.5),
    "momentum": (float, 0.9),
    "iterations": (int, 300),
    "tol": (float, 1e-6),
    "patience": (int, 10),
    "grid_h": (int, 8),
    "grid_w": (int, 8),
    "jitter": (float, 0.5),
    "jitter_samples": (int, 4),
    "seed": (int, 0),
    "t_ref": (int, 1),
    "threads": (int, 1),
}


class UsageError(ValidationError):
    pass


def parse_config(text, source="<config>"):
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise UsageError(f"{source}:{lineno}: unknown key {key!r}")
        typ = CONFIG_KEYS[key][0]
        try:
            out[key] = typ(value)
        except ValueError:
            raise UsageError(f"{source}:{lineno}: {key} expects {typ.__name__}, got {value!r}") from None
    return out


def resolve_config(args, keys):
    """Defaults, then --config file, then explicit flags (flags win)."""
    cfg = {k: CONFIG_KEYS[k][1] for k in keys}
    if getattr(args, "config", None):
        text = Path(args.config).read_text()
        for k, v in parse_config(text, args.config).items():
            if k in cfg:
                cfg[k] = v
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _default(key):
    return CONFIG_KEYS[key][1]


def _emit(args, payload, lines=None):
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        for line in lines or [f"{k}: {v}" for k, v in payload.items()]:
            print(line)


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _optimizer_config(cfg):
    return OptimizerConfig(
        grid=(cfg["grid_h"], cfg["grid_w"]),
        lr=cfg["lr"],
        momentum=cfg["momentum"],
        iterations=cfg["iterations"],
        tol=cfg["tol"],
        patience=cfg["patience"],
        lambda1=cfg["lambda1"],
        eps=cfg["eps"],
        eps_char=cfg["eps_char"],
        jitter=cfg["jitter"],
        jitter_samples=cfg["jitter_samples"],
        seed=cfg["seed"],
    )


def _write_iwe(prefix, iwe, **meta):
    evio.write_pgm16(f"{prefix}iwe.pgm", iwe)
    evio.write_f32(f"{prefix}iwe.f32", iwe, **meta)
    evio.write_ppm(f"{prefix}iwe.ppm", render_iwe_rgb(iwe))


# -- subcommands ----------------------------------------------------------------

def cmd_synth(args):
    if args.pattern in ("two-object", "two"):
        flow_gt = ((args.u, args.v), (args.u2, args.v2))
    else:
        flow_gt = (args.u, args.v)
    spec = SceneSpec(
        width=args.width, height=args.height, pattern=args.pattern, flow_gt=flow_gt,
        contrast_threshold=args.threshold, duration=args.duration, noise_rate=args.noise_rate,
    )
    stream, gt = generate(spec, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    evio.write_events(stream, out, args.format)
    gt_path = Path(args.gt_out) if args.gt_out else out.with_suffix(".flo32")
    evio.write_flow(gt_path, gt.control, gt.height, gt.width)
    _emit(args, {
        "schema": SCHEMA,
        "events": str(out),
        "gt_flow": str(gt_path),
        "event_count": len(stream),
        "sha256_events": _sha256(out),
        "sha256_gt_flow": _sha256(gt_path),
    })
    return EXIT_OK


def _windows(stream, window_ms):
    dt = int(round(window_ms * 1000))
    if dt <= 0:
        raise UsageError("window_ms must be positive")
    start, end = stream.window_start, stream.window_end
    count = max(1, math.ceil((end - start) / dt))
    for k in range(count):
        lo = start + k * dt
        hi = min(lo + dt, end)
        if k == count - 1:
            sub = stream.time_slice(lo, end + 1)
            sub = sub.select(np.arange(len(sub)), window_start=lo, window_end=max(hi, lo))
        else:
            sub = stream.time_slice(lo, hi)
        yield k, sub


def _compensate_window(stream, cfg, gt, prefix):
    h, w = stream.height, stream.width
    if len(stream) == 0:
        raise ValidationError("window contains no events")
    flow, trace = optimize_flow(stream, _optimizer_config(cfg))
    warped = warp_events(stream, flow, t_ref=cfg["t_ref"])
    iwe = splat_iwe(warped, h, w)
    lost = 1.0 - deposited_mass(warped, h, w) / len(stream)
    evio.write_flow(f"{prefix}flow.flo32", flow.control, h, w)
    _write_iwe(prefix, iwe, t_ref=cfg["t_ref"])
    metrics = {
        "schema": SCHEMA,
        "backend": BACKEND,
        "event_count": len(stream),
        "window_us": [stream.window_start, stream.window_end],
        "loss_initial": trace.initial,
        "loss_final": trace.final,
        "loss_trace": trace.losses,
        "iterations": trace.iterations,
        "best_iteration": trace.best_iteration,
        "converged": trace.converged,
        "boundary_mass_lost_fraction": max(0.0, lost),
        "lambda1": cfg["lambda1"],
        "eps": cfg["eps"],
        "eps_char": cfg["eps_char"],
        "grid": [cfg["grid_h"], cfg["grid_w"]],
        "t_ref": cfg["t_ref"],
        "epe_vs_gt": None,
    }
    if gt is not None:
        epe = endpoint_error(flow, gt, event_mask(stream))
        metrics["epe_vs_gt"] = epe
        metrics["epe_mean"] = epe
    Path(f"{prefix}metrics.json").write_text(json.dumps(metrics, sort_keys=True, indent=1) + "\n")
    return metrics


def cmd_compensate(args):
    cfg = resolve_config(args, list(CONFIG_KEYS))
    if cfg["t_ref"] not in (0, 1):
        raise UsageError("t_ref must be 0 or 1")
    stream = evio.read_events(args.events)
    gt = None
    if args.gt_flow:
        control, gh, gw = evio.read_flow(args.gt_flow)
        if (gh, gw) != (stream.height, stream.width):
            raise ValidationError("ground-truth flow size does not match the event sensor")
        gt = FlowField(control, gh, gw)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    windows = list(_windows(stream, cfg["window_ms"]))
    if not args.batch:
        if not 0 <= args.window_index < len(windows):
            raise UsageError(f"window index {args.window_index} out of range (0..{len(windows) - 1})")
        windows = [windows[args.window_index]]
    results = []
    for k, sub in windows:
        prefix = os.path.join(out_dir, args.prefix) + (f"w{k:04d}_" if args.batch else "")
        m = _compensate_window(sub, cfg, gt, prefix)
        results.append({k2: v for k2, v in m.items() if k2 != "loss_trace"} | {"window": k})
    payload = results[0] if len(results) == 1 else {"schema": SCHEMA, "windows": results}
    _emit(args, payload, [
        f"window {r['window']}: {r['event_count']} events, loss {r['loss_initial']:.6g} -> "
        f"{r['loss_final']:.6g} in {r['iterations']} iterations"
        + (f", EPE {r['epe_vs_gt']:.4f} px" if r["epe_vs_gt"] is not None else "")
        for r in results
    ])
    return EXIT_OK


def cmd_voxelize(args):
    cfg = resolve_config(args, ["bins"])
    stream = evio.read_events(args.events)
    grid = voxelize(stream, cfg["bins"])
    evio.write_f32(args.out, grid.data, window_us=[grid.window_start, grid.window_end])
    _emit(args, {
        "schema": SCHEMA,
        "out": str(args.out),
        "shape": list(grid.shape),
        "event_count": len(stream),
        "total_mass": float(grid.data.sum()),
        "sha256": _sha256(args.out),
    })
    return EXIT_OK


def cmd_iwe(args):
    cfg = resolve_config(args, ["t_ref"])
    if cfg["t_ref"] not in (0, 1):
        raise UsageError("t_ref must be 0 or 1")
    stream = evio.read_events(args.events)
    h, w = stream.height, stream.width
    if args.flow:
        control, fh, fw = evio.read_flow(args.flow)
        flow = FlowField(control, fh, fw)
    else:
        flow = FlowField.zeros(h, w, (2, 2))
    warped = warp_events(stream, flow, t_ref=cfg["t_ref"])
    iwe = splat_iwe(warped, h, w)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prefix = os.path.join(out_dir, args.prefix)
    _write_iwe(prefix, iwe, t_ref=cfg["t_ref"])
    lost = 1.0 - deposited_mass(warped, h, w) / len(stream) if len(stream) else 0.0
    _emit(args, {
        "schema": SCHEMA,
        "event_count": len(stream),
        "abs_mass": float(np.abs(iwe).sum()),
        "boundary_mass_lost_fraction": max(0.0, lost),
        "sha256_f32": _sha256(f"{prefix}iwe.f32"),
    })
    return EXIT_OK


def cmd_ssm_check(args):
    from scipy.integrate import quad

    abar, bbar = discretize(args.A, args.B, args.delta)
    abar, bbar = float(abar), float(bbar)
    quad_bbar = quad(lambda s: math.exp(s * args.A), 0.0, args.delta, epsabs=1e-14, epsrel=1e-14)[0] * args.B

    rng = np.random.default_rng(args.seed)
    n, length = args.N, args.L
    params = SSMParams(
        a=-rng.uniform(0.05, 2.0, n), b=rng.normal(size=(1, n)), c=rng.normal(size=(1, n)),
        d=rng.normal(size=1), delta=float(rng.uniform(0.05, 1.0)),
    )
    x = rng.normal(size=(length, 1))
    y = selective_scan(params, x)
    ab, bb = discretize(params.a[0], params.b[0], params.delta)
    kernel = np.array([np.sum(params.c[0] * ab**k * bb) for k in range(length)])
    kernel[0] += params.d[0]
    y_conv = np.array([np.dot(kernel[: t + 1][::-1], x[: t + 1, 0]) for t in range(length)])
    chunked = scan_chunked(params, x, max(1, length // 3))

    payload = {
        "schema": SCHEMA,
        "abar": abar,
        "bbar": bbar,
        "bbar_quadrature": quad_bbar,
        "bbar_abs_error": abs(bbar - quad_bbar),
        "scan_vs_convolution_max_abs_error": float(np.abs(y[:, 0] - y_conv).max()),
        "chunked_bitwise_equal": bool(np.array_equal(y, chunked)),
        "backend": BACKEND,
    }
    _emit(args, payload)
    return EXIT_OK


def _checksum(arr):
    return hashlib.sha256(np.ascontiguousarray(arr, dtype="<f8").tobytes()).hexdigest()


def cmd_fuse_demo(args):
    c, h, w = args.C, args.H, args.W
    if min(c, h, w) <= 0 or h % 2 or w % 2:
        raise UsageError("C, H, W must be positive and H, W even")
    if args.params:
        tensors = evio.read_tsr(args.params)
        edum_p = EdumParams.from_tensors(tensors)
        cmm_p = CmmParams.from_tensors(tensors)
    else:
        edum_p = EdumParams.init(c, seed=args.seed)
        cmm_p = CmmParams.init(c, seed=args.seed + 1)
    if args.save_params:
        evio.write_tsr(args.save_params, edum_p.tensors() | cmm_p.tensors())
    rng = np.random.default_rng(args.seed)
    event_low = rng.normal(size=(c, h // 2, w // 2))
    rgb = rng.normal(size=(c, h, w))
    event_up = edum_forward(event_low, rgb, edum_p)
    fused = cmm_forward(event_up, rgb, cmm_p)
    if not np.all(np.isfinite(fused)):
        raise NonFiniteLoss("fused output is not finite")
    _emit(args, {
        "schema": SCHEMA,
        "event_shape": list(event_low.shape),
        "upsampled_shape": list(event_up.shape),
        "fused_shape": list(fused.shape),
        "checksum": _checksum(fused),
        "fused_mean": float(fused.mean()),
        "fused_std": float(fused.std()),
    })
    return EXIT_OK


# -- parser ---------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--json", action="store_true", help="print machine-readable JSON")


def _add_config(p, keys):
    p.add_argument("--config", help="key=value configuration file; flags override it")
    names = {
        "bins": "temporal bins", "window_ms": "window length in ms", "lambda1": "smoothness weight",
        "eps": "timestamp-image epsilon", "eps_char": "Charbonnier epsilon", "lr": "step size in pixels",
        "momentum": "momentum", "iterations": "optimizer iterations", "tol": "relative stopping tolerance",
        "patience": "stopping window (iterations)", "grid_h": "control grid rows", "grid_w": "control grid columns",
        "jitter": "gradient-averaging jitter (px)", "jitter_samples": "jittered gradient samples",
        "seed": "random seed", "t_ref": "reference time of the output IWE (0 or 1)",
        "threads": "accepted for compatibility; kernels run single-threaded",
    }
    for key in keys:
        typ, default = CONFIG_KEYS[key]
        p.add_argument("--" + key.replace("_", "-"), dest=key, type=typ, default=None,
                       help=f"{names[key]} (default: {default})")


def build_parser():
    parser = argparse.ArgumentParser(prog="evalign", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic event stream with ground-truth flow")
    p.add_argument("--pattern", default="bar",
                   choices=["bar", "checker", "two-object", "translating-bar", "translating-checker", "two"],
                   help="scene pattern (default: bar)")
    p.add_argument("--u", type=float, default=8.0, help="x motion in px per window (default: 8)")
    p.add_argument("--v", type=float, default=0.0, help="y motion in px per window (default: 0)")
    p.add_argument("--u2", type=float, default=-4.0, help="second object's x motion, two-object only (default: -4)")
    p.add_argument("--v2", type=float, default=0.0, help="second object's y motion, two-object only (default: 0)")
    p.add_argument("--width", type=int, default=64, help="sensor width (default: 64)")
    p.add_argument("--height", type=int, default=64, help="sensor height (default: 64)")
    p.add_argument("--threshold", type=float, default=0.3, help="contrast threshold C (default: 0.3)")
    p.add_argument("--duration", type=int, default=50_000, help="window length in us (default: 50000)")
    p.add_argument("--noise-rate", type=float, default=0.0, help="noise events per pixel per second (default: 0)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    p.add_argument("--out", default="synth.evt", help="event file, .evt or .evb (default: synth.evt)")
    p.add_argument("--format", choices=["evt", "evb"], default=None, help="override format inferred from --out")
    p.add_argument("--gt-out", default=None, help="ground-truth flow file (default: <out>.flo32)")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("compensate", help="estimate flow by contrast maximization and write the IWE")
    p.add_argument("events", help="input .evt/.evb file")
    p.add_argument("--gt-flow", help="ground-truth .flo32 for endpoint error")
    p.add_argument("--out-dir", default=".", help="output directory (default: .)")
    p.add_argument("--prefix", default="", help="output file name prefix")
    p.add_argument("--window-index", type=int, default=0, help="which window to process (default: 0)")
    p.add_argument("--batch", action="store_true", help="process every window in sequence")
    _add_config(p, [k for k in CONFIG_KEYS if k != "bins"])
    _add_common(p)
    p.set_defaults(func=cmd_compensate)

    p = sub.add_parser("voxelize", help="build a B x H x W voxel grid")
    p.add_argument("events", help="input .evt/.evb file")
    p.add_argument("--out", default="voxels.f32", help="output .f32 file (default: voxels.f32)")
    _add_config(p, ["bins"])
    _add_common(p)
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("iwe", help="warp events with a flow file and write the IWE")
    p.add_argument("events", help="input .evt/.evb file")
    p.add_argument("--flow", help=".flo32 flow (default: zero flow)")
    p.add_argument("--out-dir", default=".", help="output directory (default: .)")
    p.add_argument("--prefix", default="", help="output file name prefix")
    _add_config(p, ["t_ref"])
    _add_common(p)
    p.set_defaults(func=cmd_iwe)

    p = sub.add_parser("ssm-check", help="compare the scan kernel against its oracles")
    p.add_argument("--A", type=float, default=-1.0, help="continuous state coefficient (default: -1)")
    p.add_argument("--delta", type=float, default=1.0, help="timescale, > 0 (default: 1.0)")
    p.add_argument("--B", type=float, default=1.0, help="input coefficient (default: 1)")
    p.add_argument("--L", type=int, default=32, help="random check sequence length (default: 32)")
    p.add_argument("--N", type=int, default=4, help="random check state size (default: 4)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    _add_common(p)
    p.set_defaults(func=cmd_ssm_check)

    p = sub.add_parser("fuse-demo", help="run upsampling + fusion on synthetic tensors")
    p.add_argument("--C", type=int, default=4, help="channels (default: 4)")
    p.add_argument("--H", type=int, default=6, help="fused height, even (default: 6)")
    p.add_argument("--W", type=int, default=6, help="fused width, even (default: 6)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    p.add_argument("--params", help="load parameters from a .tsr file")
    p.add_argument("--save-params", help="write the parameters used to a .tsr file")
    _add_common(p)
    p.set_defaults(func=cmd_fuse_demo)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NonFiniteLoss as exc:
        print(f"error: NonFiniteLoss: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ParseError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, EvalignError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
