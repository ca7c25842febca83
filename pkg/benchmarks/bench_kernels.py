"""Compare the compiled and numpy replacement kernels.

    python benchmarks/bench_kernels.py --capacity 512 4096 32768 --batch 128
"""

import argparse
import timeit

import numpy as np

from dogclr import kernels
from dogclr.edgrq import TIE_TOL


def inputs(capacity, batch, seed):
    rng = np.random.default_rng(seed)
    sims = rng.uniform(-1, 1, (batch, capacity))
    cross = rng.uniform(-1, 1, (batch, batch))
    return sims, cross


def bench(backend, capacity, batch, repeat, seed):
    sims, cross = inputs(capacity, batch, seed)
    scan = timeit.repeat(lambda: backend.replacement_scan(sims[0], cross[0, 0], TIE_TOL),
                         number=10, repeat=repeat)
    seq = timeit.repeat(lambda: backend.sequential_replace(sims.copy(), cross, 0, TIE_TOL),
                        number=1, repeat=repeat)
    return min(scan) / 10, min(seq)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--capacity", type=int, nargs="+", default=[512, 4096, 32768])
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    backends = {"python": kernels.python}
    if kernels.compiled is not None:
        backends["cython"] = kernels.compiled
    else:
        print("compiled extension not built; timing the numpy kernels only")

    print(f"batch {args.batch}, best of {args.repeat}")
    print(f"{'capacity':>8} {'backend':<8} {'single scan (ms)':>18} {'batch replace (ms)':>20}")
    for capacity in args.capacity:
        results = {}
        for name, backend in backends.items():
            scan, seq = bench(backend, capacity, args.batch, args.repeat, args.seed)
            results[name] = (scan, seq)
            print(f"{capacity:>8} {name:<8} {scan * 1e3:>18.3f} {seq * 1e3:>20.2f}")
        if "cython" in results:
            sims, cross = inputs(capacity, args.batch, args.seed)
            a = kernels.python.sequential_replace(sims.copy(), cross, 0, TIE_TOL)
            b = kernels.compiled.sequential_replace(sims.copy(), cross, 0, TIE_TOL)
            py, cy = results["python"], results["cython"]
            print(f"{capacity:>8} {'speedup':<8} {py[0] / cy[0]:>17.1f}x {py[1] / cy[1]:>19.1f}x"
                  f"  slots agree: {np.array_equal(a[0], b[0])}")


if __name__ == "__main__":
    main()
