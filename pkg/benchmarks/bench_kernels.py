"""Time the compiled kernels against the pure-Python fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel and problem size with the best time of each
implementation and the speed-up.  Results of both implementations are checked
for agreement before timing.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from mdm._kernels import implementations


def cases(rng):
    for n in (1009, 16381, 131071):
        z = np.array([1, 433, 229, 97], dtype=np.int64)
        shift = rng.random(4)
        yield "lattice_points", n, (n, z, shift)
    for n in (1009, 4001, 16381):
        base = 1.0 + rng.random(n)
        yield "cbc_criteria", n, (n, base)
    for m in (1000, 100000):
        yield "compensated_add", m, (np.zeros(m), np.zeros(m), rng.normal(size=m) * 1e8)


def run_once(impl, name, args):
    if name == "compensated_add":
        s, c, x = args
        s, c = s.copy(), c.copy()
        getattr(impl, name)(s, c, x)
        return s + c
    return getattr(impl, name)(*args)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    impls = implementations()
    if "cython" not in impls:
        print("compiled kernels not available; only the Python fallback is installed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'size':>8}" + "".join(f"{k:>12}" for k in impls) + f"{'speed-up':>10}")
    for name, size, kargs in cases(rng):
        ref = run_once(impls["python"], name, kargs)
        times = {}
        for key, impl in impls.items():
            np.testing.assert_allclose(run_once(impl, name, kargs), ref, rtol=1e-12)
            number = max(1, int(2e6 // max(size * (size if name == "cbc_criteria" else 1), 1)))
            t = min(timeit.repeat(lambda: run_once(impl, name, kargs), number=number,
                                  repeat=args.repeat))
            times[key] = t / number
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{name:<16}{size:>8}" + "".join(f"{times[k] * 1e3:>10.3f}ms" for k in impls)
              + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
