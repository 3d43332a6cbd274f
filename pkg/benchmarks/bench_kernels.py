"""Time the compiled and pure-Python kernels on the same inputs.

    python3 benchmarks/bench_kernels.py --sizes 250 500 1000 --repeat 3
"""
import argparse
import time

import numpy as np

from sptree import _kernels
from sptree.oversegment import build_knn_graph
from sptree.pipeline import synth_scene


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_nn_chain(backends, sizes, repeat, rng):
    print("\nnn_chain (augmented score width 21)")
    print(f"{'M':>6} " + " ".join(f"{name:>12}" for name in backends) + "   speedup")
    for m in sizes:
        X = np.concatenate([rng.dirichlet(np.ones(18), size=m), rng.normal(size=(m, 3))], axis=1)
        sizes_ = rng.integers(1, 200, m).astype(np.float64)
        row, outs = [], []
        for mod in backends.values():
            dt, out = best_of(lambda: mod.nn_chain(X, sizes_, _kernels.LINKAGE_WARD), repeat)
            row.append(dt)
            outs.append(out)
        for out in outs[1:]:
            assert np.array_equal(out[:, :2], outs[0][:, :2]), "backends disagree"
        print(f"{m:>6} " + " ".join(f"{dt * 1e3:>10.1f}ms" for dt in row) + f"   {max(row) / min(row):6.1f}x")


def bench_segmentation(backends, points, repeat):
    print("\nsegment_sorted_edges (k=16 graph)")
    print(f"{'N':>6} " + " ".join(f"{name:>12}" for name in backends) + "   speedup")
    for n in points:
        scene, _ = synth_scene(n_instances=4, points_per_instance=n // 6, seed=0)
        g = build_knn_graph(scene)
        order = np.lexsort((g.v, g.u, g.w))
        u, v, w = g.u[order], g.v[order], g.w[order]
        row = []
        for mod in backends.values():
            dt, _ = best_of(lambda: mod.segment_sorted_edges(u, v, w, scene.n_points, 0.01, 30), repeat)
            row.append(dt)
        print(f"{scene.n_points:>6} " + " ".join(f"{dt * 1e3:>10.1f}ms" for dt in row)
              + f"   {max(row) / min(row):6.1f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[250, 500, 1000])
    parser.add_argument("--points", type=int, nargs="+", default=[6000, 30000])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    backends = _kernels.backends()
    print("backends:", ", ".join(backends), f"(default: {_kernels.BACKEND})")
    if len(backends) < 2:
        print("compiled kernels unavailable; timing the fallback only")
    bench_nn_chain(backends, args.sizes, args.repeat, np.random.default_rng(args.seed))
    bench_segmentation(backends, args.points, args.repeat)


if __name__ == "__main__":
    main()
