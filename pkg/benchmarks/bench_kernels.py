"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both backends are imported directly, so one process measures both. Every
timing is the best of ``--repeat`` runs on identical inputs, and the outputs
are compared before anything is reported.
"""

import argparse
import random
import timeit

import numpy as np

from eventground import _fallback

try:
    from eventground import _kernels
except ImportError:  # extension not built
    _kernels = None


def _events(n, seed=0):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.integers(0, 200_000, n)).astype(np.int64)
    return (rng.integers(0, 128, n).astype(np.int64), rng.integers(0, 64, n).astype(np.int64), t,
            rng.choice(np.array([-1, 1], dtype=np.int8), n))


def cases():
    x, y, t, p = _events(100_000)
    yield "voxelize 100k events, T=9", lambda k: k.voxelize_counts(x, y, t, p, 0, 200_000, 9, 64, 128)
    rng = np.random.default_rng(1)
    costs = [np.ascontiguousarray(rng.normal(size=(4, 16))) for _ in range(200)]
    yield "hungarian 200 x (4 x 16)", lambda k: [k.hungarian(c) for c in costs]
    square = np.ascontiguousarray(rng.normal(size=(16, 16)))
    yield "hungarian 16 x 16", lambda k: k.hungarian(square)
    r = random.Random(2)
    words = ["".join(r.choice("abcdefghij") for _ in range(r.randint(3, 12))) for _ in range(400)]
    pairs = list(zip(words, reversed(words)))
    yield "levenshtein 400 word pairs", lambda k: [k.levenshtein(a, b) for a, b in pairs]


def _same(a, b):
    if isinstance(a, list):
        return all(_same(u, v) for u, v in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
        return
    print(f"{'kernel':32s} {'cython ms':>10s} {'python ms':>10s} {'speedup':>8s}")
    for name, fn in cases():
        if not _same(fn(_kernels), fn(_fallback)):
            raise SystemExit(f"{name}: backends disagree")
        fast = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat)) * 1e3
        slow = min(timeit.repeat(lambda: fn(_fallback), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:32s} {fast:10.3f} {slow:10.3f} {slow / fast:7.1f}x")


if __name__ == "__main__":
    main()
