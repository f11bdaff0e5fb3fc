#!/usr/bin/env python3
"""Benchmark the compiled range-coder kernel against the pure-Python fallback.

Both kernels produce byte-identical payloads; this script measures throughput
on a seeded corpus and prints a comparison table. Run after building the
extension (pip install -e .):

    python3 benchmarks/bench_range_coder.py [--symbols N] [--tensors K]
"""

import argparse
import time

import numpy as np

from i2vc import _detrand, _range_py, entropy


def make_case(seed, n):
    mu = _detrand.normals(_detrand.mix(seed, 1), n) * 2.0
    sigma = 0.3 + np.abs(_detrand.normals(_detrand.mix(seed, 2), n)) * 8.0
    dist = entropy.SymbolDistribution.gaussian(mu, sigma, (n,))
    sym = np.clip(np.rint(_detrand.normals(_detrand.mix(seed, 3), n) * 10.0),
                  -127, 127).astype(np.int32)
    return dist, dist.bin_index(sym)


def bench(kernel, cases, repeats=3):
    best_enc = best_dec = float("inf")
    payloads = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        payloads = [kernel.encode(idx, d.table_id, d.cumfreq) for d, idx in cases]
        best_enc = min(best_enc, time.perf_counter() - t0)
        t0 = time.perf_counter()
        for (d, idx), p in zip(cases, payloads):
            kernel.decode(p, len(idx), d.table_id, d.cumfreq)
        best_dec = min(best_dec, time.perf_counter() - t0)
    return best_enc, best_dec, payloads


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--symbols", type=int, default=4096)
    ap.add_argument("--tensors", type=int, default=64)
    args = ap.parse_args()

    cases = [make_case(k, args.symbols) for k in range(args.tensors)]
    total = args.symbols * args.tensors

    kernels = [("python", _range_py)]
    try:
        from i2vc import _range_cy
        kernels.append(("cython", _range_cy))
    except ImportError:
        print("compiled kernel not built; benchmarking the fallback only")

    print(f"corpus: {args.tensors} tensors x {args.symbols} symbols "
          f"({total} symbols total)\n")
    print(f"{'kernel':<8} {'encode':>12} {'decode':>12} {'enc Msym/s':>12} {'dec Msym/s':>12}")
    results = {}
    for name, kern in kernels:
        enc, dec, payloads = bench(kern, cases)
        results[name] = (enc, dec, payloads)
        print(f"{name:<8} {enc:>10.3f}s {dec:>10.3f}s "
              f"{total / enc / 1e6:>12.2f} {total / dec / 1e6:>12.2f}")

    if len(results) == 2:
        pe = results["python"][2]
        ce = results["cython"][2]
        identical = all(a == b for a, b in zip(pe, ce))
        speedup_e = results["python"][0] / results["cython"][0]
        speedup_d = results["python"][1] / results["cython"][1]
        print(f"\npayloads byte-identical: {identical}")
        print(f"speedup: encode {speedup_e:.1f}x, decode {speedup_d:.1f}x")


if __name__ == "__main__":
    main()
