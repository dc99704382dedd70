"""Time the numba kernels against the pure-numpy fallback.

    python benchmarks/bench_kernels.py [--n 1000000] [--repeat 5]

Each row times one kernel on both backends (best of ``--repeat``, after one
warm-up call so JIT compilation is excluded) and checks the outputs agree.
"""
import argparse
import time

import numpy as np

from mmphlab import _kernels
from mmphlab.bitio import padded
from mmphlab.config import Config
from mmphlab.mmphf import SortedKeySet, build, random_keys
from mmphlab.mphf import PerfectHashWithPayload


def _best(fn, repeat):
    fn()
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def _same(a, b):
    if isinstance(a, tuple):
        return all(np.array_equal(x, y) for x, y in zip(a, b))
    return bool(np.array_equal(a, b))


def _cases(n, rng):
    words = rng.integers(0, 1 << 63, size=n // 64 + 1, dtype=np.uint64)
    idx = _kernels.kernels("numpy")["rank9"](words)
    total = int(np.bitwise_count(words).sum())
    samples = _kernels.kernels("numpy")["select_samples"](idx, total)
    pw = padded(words)
    pos = rng.integers(0, words.size * 64, size=n)
    ranks = rng.integers(0, total, size=n)
    nleaf = n // 8
    keys = rng.integers(0, 1 << 63, size=8 * nleaf, dtype=np.uint64)
    starts = np.arange(nleaf, dtype=np.int64) * 8
    sizes = np.full(nleaf, 8, dtype=np.int64)
    seeds = rng.integers(0, 1 << 63, size=nleaf, dtype=np.uint64)
    zeros = np.zeros_like(keys)
    return {
        "rank9": lambda k: k["rank9"](words),
        "select_samples": lambda k: k["select_samples"](idx, total),
        "rank_many": lambda k: k["rank_many"](pw, idx, pos),
        "select_many": lambda k: k["select_many"](pw, idx, samples, ranks),
        "leaf_salts": lambda k: k["leaf_salts"](keys, zeros, starts, sizes, seeds, 1 << 22),
    }


def _end_to_end(n, rng, backend):
    prev = _kernels.set_backend(backend)
    try:
        keys = random_keys(rng, n << 20, n)
        t = time.perf_counter()
        PerfectHashWithPayload.build(keys, np.arange(n), 32)
        mphf = time.perf_counter() - t
        t = time.perf_counter()
        h = build(SortedKeySet(n << 20, keys), Config(regime="bucketed"))
        wrap = time.perf_counter() - t
        t = time.perf_counter()
        h.rank_many(keys)
        query = time.perf_counter() - t
    finally:
        _kernels.set_backend(prev)
    return mphf, wrap, query


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(7)
    cases = _cases(args.n, rng)
    nb, npk = _kernels.kernels("numba"), _kernels.kernels("numpy")
    print(f"{'kernel':<16}{'numba s':>12}{'numpy s':>12}{'speedup':>10}  same")
    for name, fn in cases.items():
        a, b = fn(nb), fn(npk)
        same = _same(a, b)
        tn, tp = _best(lambda: fn(nb), args.repeat), _best(lambda: fn(npk), args.repeat)
        print(f"{name:<16}{tn:>12.5f}{tp:>12.5f}{tp / tn:>10.1f}  {same}")
    m = min(args.n, 200_000)
    for backend in ("numba", "numpy"):
        mphf, wrap, query = _end_to_end(m, np.random.default_rng(1), backend)
        print(f"end-to-end n={m} [{backend}]: mphf build {mphf:.3f}s, "
              f"bucketed build {wrap:.3f}s, {query / m * 1e9:.0f} ns/query")


if __name__ == "__main__":
    main()
