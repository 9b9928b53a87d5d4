"""Time the compiled kernels against their numpy fallbacks.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from pnnkit import _fallback

try:
    from pnnkit import _kernels
except ImportError:
    _kernels = None


def cases():
    rng = np.random.default_rng(0)
    sig = rng.normal(size=16384) + 0j
    mags = rng.random(65537)
    n = 2_000_000  # roughly a VDNN-6 at K=2048
    p, g, m, v = rng.normal(size=n), rng.normal(size=n), np.zeros(n), np.zeros(n)
    adam_args = (1e-4, 0.9, 0.999, 0.1, 0.001, 1e-8, 1e-4, False)
    yield "fft_radix2 n=16384", lambda mod: mod.fft_radix2(sig)
    yield "max_of_bin 65537->16384", lambda mod: mod.max_of_bin(mags, 16384)
    yield "max_of_bin 4097->16384", lambda mod: mod.max_of_bin(mags[:4097], 16384)
    yield "adam_update n=2e6", lambda mod: mod.adam_update(p, g, m, v, *adam_args)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    print(f"{'kernel':<26}{'python ms':>12}{'compiled ms':>14}{'speedup':>10}")
    for name, fn in cases():
        py = min(timeit.repeat(lambda: fn(_fallback), number=1, repeat=args.repeat)) * 1e3
        if _kernels is None:
            print(f"{name:<26}{py:>12.3f}{'n/a':>14}{'':>10}")
            continue
        cc = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<26}{py:>12.3f}{cc:>14.3f}{py / cc:>9.1f}x")


if __name__ == "__main__":
    main()
