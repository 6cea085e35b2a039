"""Timing comparison of the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 5] [--size 20000]

Every benchmark is also a consistency check: the two backends must agree
to 1e-12 before their timings are reported.
"""
import argparse
import timeit

import numpy as np

from rossbylab.kernels import backends


def cases(n: int, rng):
    x = rng.uniform(0.0, 60.0, n)
    z = rng.uniform(0.0, 16.0, n)
    m = max(n // 50, 1)
    xi = rng.uniform(-4.0, 4.0, (2, m))
    return {
        "bessel_j0": lambda mod: mod.bessel_j0(x),
        "bessel_j1": lambda mod: mod.bessel_j1(x),
        "eigenvalues_closed": lambda mod: np.asarray(mod.eigenvalues_closed(z, np.pi, 0.04)),
        "mode_eigensystem": lambda mod: [mod.mode_eigensystem(a, b, 2 * np.pi, 0.04)[0]
                                         for a, b in xi.T],
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--size", type=int, default=20000)
    args = p.parse_args(argv)
    mods = backends()
    rng = np.random.default_rng(0)
    print(f"backends: {', '.join(mods)}; size {args.size}; best of {args.repeat}")
    print(f"{'kernel':<20}" + "".join(f"{k:>12}" for k in mods) + f"{'speed-up':>10}")
    for name, fn in cases(args.size, rng).items():
        ref = np.asarray(fn(mods["python"]))
        row, times = f"{name:<20}", []
        for mod in mods.values():
            assert np.allclose(np.asarray(fn(mod)), ref, rtol=1e-12, atol=1e-12), name
            t = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
            times.append(t)
            row += f"{t * 1e3:>10.2f}ms"
        row += f"{times[0] / times[-1]:>9.1f}x" if len(times) > 1 else f"{'-':>10}"
        print(row)


if __name__ == "__main__":
    main()
