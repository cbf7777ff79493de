"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--events 200000] [--repeat 5] [--json]

Each kernel is run on identical inputs under both backends; outputs are
checked for bitwise equality before timing. The end-to-end row times one
``ecm_loss_and_grad`` call on a synthetic 64x64 bar scene.
"""
import argparse
import json
import sys
import timeit

import numpy as np

from evalign import motion
from evalign._backend import get_kernels
from evalign.synth import SceneSpec, generate


def inputs(n_events, seed=0):
    rng = np.random.default_rng(seed)
    h = w = 128
    xw = rng.uniform(-1, w, n_events)
    yw = rng.uniform(-1, h, n_events)
    vals = rng.uniform(0, 1, n_events)
    length, channels, state = 4096, 16, 8
    return {
        "splat": ((xw, yw, vals, h, w), {}),
        "splat_grad": ((xw, yw, vals, rng.normal(size=(h, w)), rng.normal(size=(h, w))), {}),
        "voxel_deposit": ((np.sort(rng.uniform(0, 4, n_events)), rng.integers(0, w, n_events),
                           rng.integers(0, h, n_events), rng.choice([-1.0, 1.0], n_events), 5, h, w), {}),
        "scan_diag": ((rng.uniform(0.1, 0.99, (length, channels, state)), rng.normal(size=(length, channels, state)),
                       rng.normal(size=(channels, state)), np.zeros((channels, state))), {}),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(np.array_equal(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def best_time(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def end_to_end(repeat):
    stream, _ = generate(SceneSpec(flow_gt=(8, 0)), seed=0)
    flow = motion.FlowField(np.random.default_rng(1).normal(0, 2, (2, 8, 8)), 64, 64)
    times = {}
    saved = motion.kernels
    try:
        for name in ("python", "cython"):
            motion.kernels = get_kernels(name)
            times[name] = best_time(lambda: motion.ecm_loss_and_grad(stream, flow), repeat)
    finally:
        motion.kernels = saved
    return len(stream), times


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--events", type=int, default=200_000, help="events per kernel call (default: 200000)")
    ap.add_argument("--repeat", type=int, default=5, help="timing repeats, best is kept (default: 5)")
    ap.add_argument("--json", action="store_true", help="print JSON instead of a table")
    args = ap.parse_args(argv)

    try:
        fast = get_kernels("cython")
    except ImportError:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1
    slow = get_kernels("python")

    rows = []
    for name, (a, kw) in inputs(args.events).items():
        f, s = getattr(fast, name), getattr(slow, name)
        if not same(f(*a, **kw), s(*a, **kw)):
            print(f"{name}: backends disagree", file=sys.stderr)
            return 1
        rows.append({"kernel": name, "python_s": best_time(lambda: s(*a, **kw), args.repeat),
                     "cython_s": best_time(lambda: f(*a, **kw), args.repeat)})
    n, times = end_to_end(args.repeat)
    rows.append({"kernel": f"ecm_loss_and_grad ({n} events)", "python_s": times["python"], "cython_s": times["cython"]})
    for r in rows:
        r["speedup"] = r["python_s"] / r["cython_s"]

    if args.json:
        print(json.dumps(rows, indent=1))
    else:
        print(f"{'kernel':<34}{'numpy (ms)':>12}{'cython (ms)':>13}{'speedup':>9}")
        for r in rows:
            print(f"{r['kernel']:<34}{1e3 * r['python_s']:>12.2f}{1e3 * r['cython_s']:>13.2f}{r['speedup']:>8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
