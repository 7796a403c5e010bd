"""Compare the compiled bilateral kernel, the numpy fallback and the bilateral grid.

    python benchmarks/bench_kernels.py [--sizes 128x192 512x768] [--repeat 3]
"""
import argparse
import time

import numpy as np

from tmoz import bilateral
from tmoz.hdr_io import SRGB_TO_XYZ
from tmoz.synthetic import natural_hdr


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def parse_size(text):
    h, w = text.lower().split("x")
    return int(h), int(w)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", nargs="+", type=parse_size, default=[(128, 192), (256, 384), (512, 768)])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)

    backends = sorted(bilateral.BACKENDS, reverse=True)
    print(f"backends: {', '.join(backends)}; default: {bilateral.DEFAULT_BACKEND}")
    print(f"{'size':>10} {'sigma_s':>7} " + " ".join(f"{b:>10}" for b in backends)
          + f" {'grid':>10} {'speedup':>8} {'grid err':>9}")
    for h, w in args.sizes:
        Q = natural_hdr((h, w), 1e4, seed=0).data @ SRGB_TO_XYZ[1]
        _, logq = bilateral.log_normalise(Q)
        sigma_s = bilateral.default_sigma_s(logq.shape)
        times, outs = {}, {}
        for b in backends:
            times[b], outs[b] = best_of(
                lambda: bilateral.bilateral_filter(logq, sigma_s, bilateral.SIGMA_R, args.workers, b), args.repeat)
        t_grid, grid = best_of(lambda: bilateral.bilateral_grid(logq, sigma_s, bilateral.SIGMA_R), args.repeat)
        ref = outs[backends[0]]
        for b in backends[1:]:
            assert np.max(np.abs(outs[b] - ref)) < 1e-10, f"{b} disagrees with {backends[0]}"
        speedup = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{h:>4}x{w:<5} {sigma_s:7.2f} " + " ".join(f"{times[b]:9.3f}s" for b in backends)
              + f" {t_grid:9.3f}s {speedup:7.1f}x {np.max(np.abs(grid - ref)):9.4f}")


if __name__ == "__main__":
    main()
