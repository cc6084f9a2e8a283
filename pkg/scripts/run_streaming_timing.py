"""Time the one-pass countsketch on n x k dense rows for a ladder of n."""

import argparse
import time

import numpy as np

from sketchreg.linalg import RngStream
from sketchreg.sketch import stream_countsketch


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--k", type=int, default=12)
    ap.add_argument("--m", type=int, default=256)
    ap.add_argument("--ns", type=int, nargs="+", default=[100_000, 300_000, 1_000_000])
    args = ap.parse_args()

    A = np.random.default_rng(0).standard_normal((max(args.ns), args.k))
    prev = None
    for n in args.ns:
        t0 = time.perf_counter()
        stream_countsketch(enumerate(A[:n]), args.m, RngStream(1))
        dt = time.perf_counter() - t0
        extra = f"  ratio {dt / prev[1]:.2f} for n x{n / prev[0]:g}" if prev else ""
        print(f"n={n:>9}  {dt:.3f} s  {1e9 * dt / (n * args.k):.1f} ns/entry{extra}")
        prev = (n, dt)


if __name__ == "__main__":
    main()
