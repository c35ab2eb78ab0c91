"""Time the graph-convolution kernels: numba loops vs the numpy fallback.

    python3 benchmarks/bench_kernels.py [--n 30 200 1000] [--repeat 20]

Each size uses a synthetic grid network with plain + speed-limit-ratio
weights at k=3 and a batch of 50 windows of 12 steps, which is what one
training mini-batch pushes through the layer.
"""
import argparse
import time

import numpy as np

from mwtgc import _kernels
from mwtgc.data import SynthSpec, _grid_network
from mwtgc.model import ModelConfig, layer_from_weight_set
from mwtgc.numerics import make_rng
from mwtgc.weights import build_weight_set


def best_of(fn, repeat):
    fn()  # warm-up (also triggers numba compilation)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def run(n, repeat, rows_per_batch=50 * 12):
    spec = SynthSpec(n_segments=n)
    net = _grid_network(spec, make_rng(0))
    layer = layer_from_weight_set(build_weight_set(net, 3, ("plain", "speed_limit_ratio")))
    rng = np.random.default_rng(0)
    x = rng.normal(size=(rows_per_batch, n))
    vals = layer.wtilde * 1.01
    rows, cols, slots, m = layer.rows, layer.cols, layer.slots, layer.n_slots
    gout = rng.normal(size=(rows_per_batch, n * m))
    out = {}
    for name, fwd, bwd in (("numpy", _kernels.gc_forward_numpy, _kernels.gc_backward_numpy),
                           ("numba", _kernels.gc_forward_numba, _kernels.gc_backward_numba)):
        if name == "numba" and not _kernels.HAS_NUMBA:
            continue
        out[name] = (best_of(lambda: fwd(x, rows, cols, slots, vals, m), repeat),
                     best_of(lambda: bwd(gout, x, rows, cols, slots, vals, m), repeat))
    return rows.size, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[30, 200, 1000])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    print(f"{'N':>6} {'edges':>8} {'backend':>8} {'forward ms':>11} {'backward ms':>12} {'speed-up':>9}")
    for n in args.n:
        edges, res = run(n, args.repeat)
        base = sum(res["numpy"])
        for name, (f, b) in res.items():
            print(f"{n:>6} {edges:>8} {name:>8} {f * 1e3:>11.3f} {b * 1e3:>12.3f} {base / (f + b):>8.1f}x")


if __name__ == "__main__":
    main()
