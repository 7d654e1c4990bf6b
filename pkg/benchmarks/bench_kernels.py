"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--sizes 50 200 1000] [--repeat 5]

Prints the best-of-``repeat`` wall time per call for each kernel and backend,
and checks that both backends return identical arrays.
"""
import argparse
import timeit

import numpy as np

from vidloc import kernels


def make_inputs(n, rng):
    starts = rng.uniform(0, 1000, n)
    ends = starts + rng.uniform(1, 100, n)
    scores = rng.uniform(0, 1, n)
    videos = rng.integers(0, max(n // 20, 1), n)
    return starts, ends, scores, videos


def cases(n, rng):
    s, e, p, v = make_inputs(n, rng)
    gs, ge, _, gv = make_inputs(max(n // 4, 1), rng)
    return {
        "soft_nms": lambda b: kernels.soft_nms(s, e, p, 0.5, 0.001, backend=b),
        "iou_matrix": lambda b: kernels.iou_matrix(s, e, gs, ge, backend=b),
        "match_detections": lambda b: kernels.match_detections(v, s, e, gv, gs, ge, 0.5, backend=b),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[50, 200, 1000])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = sorted(kernels.BACKENDS)
    print(f"backends: {', '.join(backends)} (default {kernels.BACKEND})")
    header = f"{'kernel':<18}{'n':>6}" + "".join(f"{b + ' ms':>14}" for b in backends)
    if len(backends) > 1:
        header += f"{'speedup':>10}{'equal':>7}"
    print(header)
    rng = np.random.default_rng(args.seed)
    for n in args.sizes:
        for name, fn in cases(n, rng).items():
            number = max(1, int(2000 / n))
            times = {}
            for b in backends:
                t = min(timeit.repeat(lambda: fn(b), number=number, repeat=args.repeat))
                times[b] = 1e3 * t / number
            row = f"{name:<18}{n:>6}" + "".join(f"{times[b]:>14.3f}" for b in backends)
            if len(backends) > 1:
                row += f"{times['python'] / times['compiled']:>9.1f}x"
                row += f"{str(same(fn('python'), fn('compiled'))):>7}"
            print(row)


if __name__ == "__main__":
    main()
