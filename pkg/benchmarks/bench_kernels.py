"""Time the compiled and numpy gate kernels on the same workloads.

    python3 benchmarks/bench_kernels.py --qubits 10 14 18 --repeat 5
"""
import argparse
import timeit

import numpy as np

from qhybrid.kernels import BACKENDS


def workloads(n, rng):
    def unitary(k):
        z = rng.standard_normal((1 << k, 1 << k)) + 1j * rng.standard_normal((1 << k, 1 << k))
        q, _ = np.linalg.qr(z)
        return np.ascontiguousarray(q)

    u1, u2 = unitary(1), unitary(2)
    return {
        "1q": (u1, np.array([n // 2], dtype=np.int64), 0, 0),
        "1q+2ctrl": (u1, np.array([0], dtype=np.int64), (1 << (n - 1)) | (1 << 1), 1 << (n - 1)),
        "2q": (u2, np.array([1, n - 1], dtype=np.int64), 0, 0),
        "2q+1ctrl": (u2, np.array([0, 2], dtype=np.int64), 1 << 1, 1 << 1),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--qubits", type=int, nargs="+", default=[8, 12, 16, 20])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    names = sorted(BACKENDS)
    print(f"backends: {', '.join(names)}")
    header = f"{'qubits':>6} {'gate':>9} " + " ".join(f"{b + ' (us)':>14}" for b in names)
    if "compiled" in BACKENDS:
        header += f" {'speedup':>8}"
    print(header)
    for n in args.qubits:
        base = rng.standard_normal(1 << n) + 1j * rng.standard_normal(1 << n)
        base /= np.linalg.norm(base)
        for label, (m, targets, mask, value) in workloads(n, rng).items():
            times = {}
            results = {}
            for b in names:
                fn = BACKENDS[b]
                state = base.copy()
                number = max(1, 2 ** max(0, 20 - n))
                t = min(timeit.repeat(lambda: fn(state, m, targets, mask, value), number=number, repeat=args.repeat))
                times[b] = t / number * 1e6
                once = base.copy()
                fn(once, m, targets, mask, value)
                results[b] = once
            row = f"{n:>6} {label:>9} " + " ".join(f"{times[b]:>14.1f}" for b in names)
            if "compiled" in BACKENDS:
                row += f" {times['pure'] / times['compiled']:>7.1f}x"
                assert np.allclose(results["pure"], results["compiled"], atol=1e-12)
            print(row)


if __name__ == "__main__":
    main()
