#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Runs each hot kernel on representative problem sizes with both backends
and prints the per-call time and speedup.  Usage:

    python benchmarks/bench_kernels.py [--repeats 200]
"""

import argparse
import time

import numpy as np

from bectra import Rng
from bectra._kernels import PY_KERNELS, numba_kernels


def normalized(rng, shape, axis):
    x = rng.generator.standard_normal(shape)
    return x - np.logaddexp.reduce(x, axis=axis, keepdims=True)


def make_cases(rng):
    T, C, N = 50, 32, 12
    logp = normalized(rng, (T, C), 1)
    lat = normalized(rng, (T, N + 1, C), 2)
    labels = rng.generator.integers(1, C, size=N).astype(np.int64)
    ref = rng.generator.integers(0, 30, size=40).astype(np.int64)
    hyp = rng.generator.integers(0, 30, size=45).astype(np.int64)
    return {
        "ctc_forward": (logp, labels, 0),
        "ctc_posteriors": (logp, labels, 0),
        "rnnt_forward": (lat, labels, 0),
        "rnnt_posteriors": (lat, labels, 0),
        "levenshtein": (ref, hyp),
    }


def time_call(fn, args, repeats):
    fn(*args)  # warm-up (and JIT compile for the numba path)
    start = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - start) / repeats


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    cases = make_cases(Rng(0))
    jit = numba_kernels()
    print(f"{'kernel':<18}{'numpy':>12}{'numba':>12}{'speedup':>10}")
    for name, call_args in cases.items():
        t_py = time_call(PY_KERNELS[name], call_args, max(1, args.repeats // 20))
        t_nb = time_call(jit[name], call_args, args.repeats)
        print(f"{name:<18}{t_py * 1e3:>10.3f}ms{t_nb * 1e3:>10.3f}ms{t_py / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
