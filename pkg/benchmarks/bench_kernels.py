"""Time the numba kernels against the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each kernel runs once untimed (JIT warm-up), then ``repeat`` times; the
best wall time per backend is reported together with a check that both
backends return identical arrays.
"""
import argparse
import json
import time

import numpy as np

from poisson_hail import _kernels
from poisson_hail.precedence import build_dag
from poisson_hail.rain import Dist, RainConfig, ShapeDist, sample_rain


def best_time(fn, repeat):
    out = fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def cases(rng):
    cfg = RainConfig(2, 0.5, ((0, 0), (40, 40)), (0, 40), ShapeDist("ball", Dist.uniform(0.2, 1.0)),
                     Dist.exponential(1.0), pad=1.0)
    rain = sample_rain(cfg, rng)
    dag = build_dag(rain)
    init = np.zeros(dag.n)
    start = np.zeros(dag.n, bool)
    start[-50:] = True
    v = rng.random((4, 400, 512)) < 0.2
    e = rng.random((4, 400, 512)) < 0.5
    s = rng.exponential(1.0, v.shape)
    radius = np.where(rng.random((256, 256)) < 0.05, rng.integers(1, 3, (256, 256)), 0)
    return {
        f"dag_forward (n={dag.n}, edges={dag.n_edges})":
            lambda impl: _kernels.dag_forward(dag.ptr, dag.idx, init, rain.sigma, impl=impl),
        "dag_backward":
            lambda impl: _kernels.dag_backward(dag.ptr, dag.idx, start, rain.sigma, impl=impl),
        "grid_growth (4x400x512)":
            lambda impl: _kernels.grid_growth(v, e, True, keep_history=False, impl=impl),
        "grid_service (4x400x512)":
            lambda impl: _kernels.grid_service(v, e, s, True, keep_history=False, impl=impl),
        "grid_target_paths (4x400x512)":
            lambda impl: _kernels.grid_target_paths(v, e, True, 0, impl=impl),
        "clump_cover (256x256)":
            lambda impl: _kernels.clump_cover(radius, impl=impl),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json")
    args = ap.parse_args()
    if _kernels.numba_impl is None:
        raise SystemExit("numba backend unavailable")
    rows = []
    print(f"{'kernel':40s} {'numba s':>10s} {'numpy s':>10s} {'speedup':>8s}  equal")
    for name, fn in cases(np.random.default_rng(args.seed)).items():
        tn, on = best_time(lambda: fn(_kernels.numba_impl), args.repeat)
        tp, op = best_time(lambda: fn(_kernels.numpy_impl), args.repeat)
        eq = same(on, op)
        rows.append({"kernel": name, "numba_s": tn, "numpy_s": tp, "speedup": tp / tn, "equal": eq})
        print(f"{name:40s} {tn:10.4f} {tp:10.4f} {tp / tn:8.1f}  {eq}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)


if __name__ == "__main__":
    main()
