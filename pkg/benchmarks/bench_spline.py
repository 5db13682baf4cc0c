"""Benchmark the compiled spline kernels against the numpy fallback.

Times ``rqs_forward``, ``rqs_inverse`` and ``rqs_backward`` on random
valid spline parameters for a range of batch sizes and prints a table
of per-call times and the compiled/numpy speedup.

Run with ``python benchmarks/bench_spline.py``.
"""

import argparse
import time

import numpy as np

from pivotalcp import _kernels


def random_params(n, K, seed):
    rng = np.random.Generator(np.random.Philox(seed))
    w = rng.dirichlet(np.full(K, 3.0), size=n) * (1 - K * 1e-3) + 1e-3
    h = rng.dirichlet(np.full(K, 3.0), size=n) * (1 - K * 1e-3) + 1e-3
    d = np.empty((n, K + 1))
    d[:, 0] = 1.0
    d[:, K] = 1.0
    d[:, 1:K] = 1e-4 + rng.gamma(2.0, 0.5, size=(n, K - 1))
    t = rng.uniform(-0.2, 1.2, size=n)
    u = rng.uniform(1e-4, 1 - 1e-4, size=n)
    return (np.ascontiguousarray(t), np.ascontiguousarray(u),
            np.ascontiguousarray(w), np.ascontiguousarray(h),
            np.ascontiguousarray(d))


def time_call(fn, *args, repeats):
    fn(*args)  # warm up
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--bins", type=int, default=16)
    parser.add_argument("--repeats", type=int, default=20)
    parser.add_argument("--sizes", type=int, nargs="+",
                        default=[256, 4096, 65536])
    args = parser.parse_args()

    backends = _kernels.available_backends()
    if "compiled" not in backends:
        print("compiled backend unavailable; benchmarking numpy only")

    ops = {
        "forward": lambda t, u, w, h, d: _kernels.rqs_forward(t, w, h, d),
        "inverse": lambda t, u, w, h, d: _kernels.rqs_inverse(u, w, h, d),
        "backward": lambda t, u, w, h, d: _kernels.rqs_backward(t, w, h, d),
    }

    print(f"{'op':<10}{'n':>8}" + "".join(f"{b:>14}" for b in backends)
          + ("   speedup" if len(backends) > 1 else ""))
    original = _kernels.backend_name()
    try:
        for name, op in ops.items():
            for n in args.sizes:
                params = random_params(n, args.bins, seed=n)
                times = {}
                for backend in backends:
                    _kernels.set_backend(backend)
                    times[backend] = time_call(op, *params,
                                               repeats=args.repeats)
                row = f"{name:<10}{n:>8}" + "".join(
                    f"{times[b] * 1e3:>12.3f}ms" for b in backends
                )
                if len(backends) > 1:
                    row += f"   {times['numpy'] / times['compiled']:>6.2f}x"
                print(row)
    finally:
        _kernels.set_backend(original)


if __name__ == "__main__":
    main()
