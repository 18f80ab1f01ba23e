"""Benchmark: compiled patch kernels vs. the pure-numpy fallback.

Times the conv2d forward/backward pair on encoder- and decoder-shaped
batches with both backends and prints a small table.  Run as:

    python benchmarks/bench_conv.py [--repeats N]
"""

import argparse
import time

import numpy as np

from dtigrid.diffcore import convops, _convnp


CASES = [
    # (label, batch, in_ch, out_ch, k)
    ("enc.conv1 (1->16, 3x3)", 64, 1, 16, 3),
    ("enc.conv2 (16->32, 3x3)", 64, 16, 32, 3),
    ("dec.conv1 (34->32, 3x3)", 64, 34, 32, 3),
    ("dec.conv2 (32->16, 3x3)", 64, 32, 16, 3),
]


def _run_pair(impl, x, w, b, gy, repeats):
    saved = convops._impl
    convops._impl = impl
    try:
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            y, cache = convops.conv2d_forward(x, w, b)
            convops.conv2d_backward(cache, w, gy)
            best = min(best, time.perf_counter() - t0)
        return best
    finally:
        convops._impl = saved


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    if convops._convcore is None:
        print("compiled extension not available; benchmarking numpy only")

    rng = np.random.default_rng(0)
    print(f"{'case':<28} {'numpy':>10} {'compiled':>10} {'speedup':>8}")
    for label, batch, cin, cout, k in CASES:
        x = rng.normal(size=(batch, cin, 9, 9))
        w = rng.normal(size=(cout, cin, k, k))
        b = rng.normal(size=cout)
        gy = rng.normal(size=(batch, cout, 9, 9))
        t_np = _run_pair(_convnp, x, w, b, gy, args.repeats)
        if convops._convcore is not None:
            t_c = _run_pair(convops._convcore, x, w, b, gy, args.repeats)
            print(
                f"{label:<28} {t_np * 1e3:>8.3f}ms {t_c * 1e3:>8.3f}ms "
                f"{t_np / t_c:>7.2f}x"
            )
        else:
            print(f"{label:<28} {t_np * 1e3:>8.3f}ms {'-':>10} {'-':>8}")


if __name__ == "__main__":
    main()
