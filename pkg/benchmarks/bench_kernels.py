"""Compiled vs pure-Python SOR sweep timings.

    python benchmarks/bench_kernels.py [--sizes 17 33 65] [--sweeps 20]

Both backends run the same in-place sweep from the same TFI start, so the
ratio is the speedup of the extension alone.
"""
import argparse

from meshonet.bench import bench_kernels, kernel_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--family", default="arch")
    ap.add_argument("--param", type=float, default=0.5)
    ap.add_argument("--sizes", type=int, nargs="+", default=[17, 33, 65])
    ap.add_argument("--sweeps", type=int, default=20)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    rows = []
    for n in args.sizes:
        rows.extend(bench_kernels(args.family, args.param, (n, n), args.sweeps, args.repeats))
    print(kernel_csv(rows), end="")
    by = {(r.backend, r.resolution): r.seconds for r in rows}
    for n in args.sizes:
        c, p = by.get(("cython", (n, n))), by.get(("python", (n, n)))
        if c and p:
            print(f"# {n}x{n}: compiled is {p / c:.1f}x faster")


if __name__ == "__main__":
    main()
