"""Compare the compiled kernels with the pure-Python fallback.

Runs each kernel on the same seeded inputs under both backends and prints
the best-of-N time per call batch and the speedup.  Exits 1 if the compiled
extension is not built.

    python benchmarks/bench_kernels.py --repeat 5
"""

from __future__ import annotations

import argparse
import random
import sys
import timeit

from folkfed import _kernels_py

try:
    from folkfed import _kernels as _compiled
except ImportError:
    _compiled = None


def make_inputs(seed: int, n: int):
    rng = random.Random(seed)
    lattice = [(a, b, c) for a in range(26) for b in range(10) for c in range(10)]
    reqs = [(rng.randrange(7), tuple(rng.choice([None, rng.randint(0, 9)]) if i else rng.randint(0, 25) for i in range(3))) for _ in range(8)]
    authors = [f"peer{i}" for i in range(5)]
    rows = [
        (rng.choice(authors), f"@{rng.choice(authors)}:s{rng.randint(0, 200)}", rng.choice(["a", "rate", "name"]), rng.choice("aisd"), str(rng.randint(0, 50)))
        for _ in range(n)
    ]
    probe = rows[n // 2]
    return lattice, reqs, rows, probe


def cases(impl, lattice, reqs, rows, probe):
    mv = impl.match_version
    return {
        "match_version (2600 x 8)": lambda: [mv(v, op, p) for op, p in reqs for v in lattice],
        f"encode_rows ({len(rows)} rows)": lambda: impl.encode_rows(rows),
        f"filter_rows ({len(rows)} rows, predicate)": lambda: impl.filter_rows(rows, None, None, probe[2], None, None),
        f"filter_rows ({len(rows)} rows, object)": lambda: impl.filter_rows(rows, None, None, None, probe[3], probe[4]),
    }


def best(fn, repeat: int, number: int) -> float:
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rows", type=int, default=20_000)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--number", type=int, default=3)
    p.add_argument("--seed", type=int, default=1)
    args = p.parse_args(argv)
    if _compiled is None:
        print("compiled kernels are not built; run 'pip install -e . --no-build-isolation'", file=sys.stderr)
        return 1
    inputs = make_inputs(args.seed, args.rows)
    py_cases = cases(_kernels_py, *inputs)
    cy_cases = cases(_compiled, *inputs)
    print(f"{'kernel':<40} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name in py_cases:
        assert py_cases[name]() == cy_cases[name](), name
        t_py = best(py_cases[name], args.repeat, args.number)
        t_cy = best(cy_cases[name], args.repeat, args.number)
        print(f"{name:<40} {t_py * 1e3:>10.2f} {t_cy * 1e3:>10.2f} {t_py / t_cy:>7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
