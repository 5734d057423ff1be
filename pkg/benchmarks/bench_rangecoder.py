"""Compare the compiled and pure-Python range coder backends.

Usage: python benchmarks/bench_rangecoder.py [--n 200000] [--repeat 3]

Symbols are drawn from discretized Gaussians of random scale so the table mix
resembles what the hyperprior codec produces.
"""

import argparse
import time

import numpy as np

from percsim.codec.tables import GaussianTables
from percsim.entropy import backends


def make_workload(n, seed=0):
    rng = np.random.default_rng(seed)
    tables = GaussianTables()
    sigma = np.exp(rng.uniform(np.log(0.2), np.log(20.0), n))
    symbols = np.rint(rng.normal(0.0, sigma)).astype(np.int32)
    return symbols, tables.indexes(sigma), tables


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    symbols, idx, t = make_workload(args.n)
    table_args = (t.cdfs, t.sizes, t.offsets)
    results, streams = {}, {}
    for name, mod in backends().items():
        enc, data = best_of(lambda: mod.encode_indexed(symbols, idx, *table_args), args.repeat)
        dec, back = best_of(lambda: mod.decode_indexed(data, idx, *table_args), args.repeat)
        if not np.array_equal(np.asarray(back), symbols):
            raise SystemExit(f"{name}: round trip failed")
        results[name] = (enc, dec)
        streams[name] = data

    print(f"{args.n} symbols, {len(streams['python'])} bytes")
    print(f"{'backend':<8} {'encode s':>10} {'decode s':>10} {'Msym/s enc':>11} {'Msym/s dec':>11}")
    for name, (enc, dec) in results.items():
        print(f"{name:<8} {enc:>10.4f} {dec:>10.4f} {args.n / enc / 1e6:>11.2f} {args.n / dec / 1e6:>11.2f}")
    if "cython" in results:
        same = streams["cython"] == streams["python"]
        py, cy = results["python"], results["cython"]
        print(f"identical bytes: {same}; speedup encode {py[0] / cy[0]:.1f}x, decode {py[1] / cy[1]:.1f}x")
    else:
        print("compiled backend not built; only the fallback was timed")


if __name__ == "__main__":
    main()
