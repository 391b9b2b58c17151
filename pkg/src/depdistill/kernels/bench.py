"""Compare the compiled and pure-Python kernels.

    python3 -m depdistill.kernels.bench [--sizes 5,20,50] [--repeat 200]

Both backends get identical random score matrices; the decoded trees are
checked to agree before any timing is reported.
"""
import argparse
import time

import numpy as np

from . import compiled, python


def random_scores(n, rng):
    s = rng.normal(size=(n, n + 1))
    s[np.arange(n), np.arange(n) + 1] = -np.inf
    return s


def time_kernel(fn, inputs, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        for x in inputs:
            fn(x)
        best = min(best, time.perf_counter() - start)
    return best / len(inputs)


def compare(sizes=(5, 20, 50), cases=20, repeat=5, seed=0):
    """Rows of (kernel, n, python seconds/call, compiled seconds/call or None)."""
    rng = np.random.default_rng(seed)
    rows = []
    for n in sizes:
        mats = [random_scores(n, rng) for _ in range(cases)]
        # decoded trees of the random matrices double as realistic head vectors
        heads = [np.asarray(python.chu_liu_edmonds(m, False)) for m in mats]
        kernels = [
            ("chu_liu_edmonds", mats, lambda impl: lambda m: impl.chu_liu_edmonds(m, True)),
            ("count_nonprojective", heads, lambda impl: impl.count_nonprojective),
        ]
        for name, inputs, make in kernels:
            if compiled is not None:
                for x in inputs:
                    a, b = make(python)(x), make(compiled)(x)
                    if not np.array_equal(np.asarray(a), np.asarray(b)):
                        raise AssertionError(f"{name} backends disagree at n={n}")
            py = time_kernel(make(python), inputs, repeat)
            cy = time_kernel(make(compiled), inputs, repeat) if compiled is not None else None
            rows.append((name, n, py, cy))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="5,20,50")
    ap.add_argument("--cases", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    sizes = [int(x) for x in args.sizes.split(",")]
    print(f"{'kernel':<20} {'n':>4} {'python us':>12} {'compiled us':>12} {'speedup':>8}")
    for name, n, py, cy in compare(sizes, args.cases, args.repeat):
        if cy is None:
            print(f"{name:<20} {n:>4} {py * 1e6:>12.1f} {'-':>12} {'-':>8}")
        else:
            print(f"{name:<20} {n:>4} {py * 1e6:>12.1f} {cy * 1e6:>12.1f} {py / cy:>7.1f}x")


if __name__ == "__main__":
    main()
