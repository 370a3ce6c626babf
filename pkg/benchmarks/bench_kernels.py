"""Compare the numba and numpy implementations of the hot kernels.

Both variants are imported side by side from ``synthlogs.kernels`` (the
``*_numba`` and ``*_numpy`` functions), so one process measures both. The
``--e2e`` flag additionally times one generate + fit cycle in two
subprocesses, one with ``SYNTHLOGS_DISABLE_NUMBA=1``.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--e2e] [--json out.json]
"""

import argparse
import json
import math
import os
import subprocess
import sys
import time

import numpy as np

from synthlogs import kernels
from synthlogs._accel import HAS_NUMBA


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times), float(np.median(times))


def cases(rng):
    # knot shell residuals: ~1000 annotation points against 256 axis stations
    pts = rng.normal(size=(1000, 3)) * [20.0, 20.0, 60.0]
    stations = np.cumsum(rng.normal(size=(256, 3)), axis=0)
    yield "nearest_station 1000x256", (pts, stations), kernels.nearest_station_numpy, kernels.nearest_station_numba

    # one grain octave on a 600 x 256 heightmap of a 150 mm log
    n_l, n_theta, length, circ = 600, 256, 3000.0, 2 * math.pi * 150.0
    n = rng.poisson(0.05 * circ * (length + 24.0))
    args = (n_l, n_theta, circ / n_theta, length / n_l, rng.uniform(0, circ, n), rng.uniform(-12, length + 12, n),
            rng.choice([-1.0, 1.0], n), 0.15, 4.0, 12.0)
    yield f"gabor_splat {n} impulses", args, kernels.gabor_splat_numpy, kernels.gabor_splat_numba

    # hole filling on a sparsely observed 200 x 256 heightmap
    values = 150.0 + rng.normal(size=(200, 256))
    valid = rng.random((200, 256)) < 0.7
    values[~valid] = values[valid].mean()
    yield "fill_holes 200x256 (30% empty)", (values, valid, 1e-6), kernels.fill_holes_numpy, kernels.fill_holes_numba


E2E_SNIPPET = """
import time, numpy as np
from synthlogs.stats import reference_statistics
from synthlogs.synth import GenerationConfig, generate_log, to_annotated
from synthlogs.fitting import fit_log
t = time.perf_counter()
g = generate_log(reference_statistics(), GenerationConfig(seed=3, log_length=1500.0))
t_gen = time.perf_counter() - t
data = to_annotated(g, 0.1, np.random.default_rng(0))
t = time.perf_counter()
fit_log(data)
print(t_gen, time.perf_counter() - t)
"""


def end_to_end():
    out = {}
    for label, disable in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, SYNTHLOGS_DISABLE_NUMBA=disable)
        # warm-up run populates the numba cache so compilation is not timed
        subprocess.run([sys.executable, "-c", E2E_SNIPPET], env=env, check=True, capture_output=True)
        res = subprocess.run([sys.executable, "-c", E2E_SNIPPET], env=env, check=True, capture_output=True, text=True)
        out[label] = [float(v) for v in res.stdout.split()]
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description="numba vs numpy kernel timings")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--e2e", action="store_true", help="also time generate + fit with each backend")
    ap.add_argument("--json", help="write results to this file")
    args = ap.parse_args(argv)

    if not HAS_NUMBA:
        print("numba is unavailable or disabled; only the numpy column is meaningful")
    rng = np.random.default_rng(args.seed)
    rows = []
    print(f"{'kernel':34s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}  max |diff|")
    for name, call_args, f_np, f_nb in cases(rng):
        r_np = f_np(*call_args)
        r_nb = f_nb(*call_args)  # first call compiles (or loads the cache)
        a = np.asarray(r_np[0] if isinstance(r_np, tuple) else r_np, dtype=np.float64)
        b = np.asarray(r_nb[0] if isinstance(r_nb, tuple) else r_nb, dtype=np.float64)
        diff = float(np.abs(a - b).max())
        t_np, _ = best_of(lambda: f_np(*call_args), args.repeat)
        t_nb, _ = best_of(lambda: f_nb(*call_args), args.repeat)
        rows.append({"kernel": name, "numpy_s": t_np, "numba_s": t_nb, "speedup": t_np / t_nb, "max_abs_diff": diff})
        print(f"{name:34s} {1e3 * t_np:10.2f} {1e3 * t_nb:10.2f} {t_np / t_nb:7.1f}x  {diff:.2e}")

    result = {"kernels": rows}
    if args.e2e:
        e2e = end_to_end()
        result["end_to_end"] = e2e
        for label, (t_gen, t_fit) in e2e.items():
            print(f"end-to-end {label:6s}: generate {t_gen:6.2f} s, fit {t_fit:6.2f} s")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(result, fh, indent=1)


if __name__ == "__main__":
    main()
