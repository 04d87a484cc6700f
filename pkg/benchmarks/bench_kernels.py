"""Compare the compiled and numpy kernel backends on representative sizes.

Usage::

    python benchmarks/bench_kernels.py [--qubits 4 6] [--repeat 5]

Prints one line per (kernel, qubits, backend) with the best wall time and
the speedup of the compiled backend over numpy.
"""

import argparse
import timeit

import numpy as np

from lindlearn import kernels


def _random_rho(n, rng):
    d = 1 << n
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = a @ a.conj().T
    return np.ascontiguousarray(rho / np.trace(rho))


def cases(n, rng):
    d = 1 << n
    xmask, zmask = rng.integers(0, d, size=2)
    rho = _random_rho(n, rng)
    probs = rng.random(d)
    probs /= probs.sum()
    masks = np.arange(1, min(d, 64), dtype=np.int64)
    S = np.ascontiguousarray(rng.normal(size=(4, 4)) + 0j)
    L = np.zeros((d * d, d * d), dtype=complex) if n <= 5 else None

    def make(mod):
        perm, ph = mod.pauli_monomial(int(xmask), int(zmask), n)
        out = {
            "pauli_monomial": lambda: mod.pauli_monomial(int(xmask), int(zmask), n),
            "pauli_rotate": lambda: mod.pauli_rotate(rho, perm, ph, 0.6, 0.8),
            "apply_1q_superop": lambda: mod.apply_1q_superop(rho, S, n // 2, n),
            "pauli_expectation": lambda: mod.pauli_expectation(rho, perm, ph),
            "z_expectations": lambda: mod.z_expectations(probs, masks),
        }
        if L is not None:
            out["add_monomial_superop"] = lambda: mod.add_monomial_superop(
                L, 0.5 + 0j, perm, ph, perm, ph)
        return out

    return make


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--qubits", type=int, nargs="+", default=[4, 6, 8])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled backend not built; timing numpy only")
    rng = np.random.default_rng(0)
    print(f"{'kernel':22s} {'n':>3s} " + " ".join(f"{b:>12s}" for b in backends) + "  speedup")
    for n in args.qubits:
        make = cases(n, rng)
        fns = {b: make(kernels.load_backend(b)) for b in backends}
        for name in fns["python"]:
            times = {}
            for b in backends:
                f = fns[b][name]
                number = max(1, int(0.05 / max(timeit.timeit(f, number=1), 1e-7)))
                times[b] = min(timeit.repeat(f, number=number, repeat=args.repeat)) / number
            cols = " ".join(f"{times[b] * 1e6:10.1f}us" for b in backends)
            speed = times["python"] / times["cython"] if "cython" in times else float("nan")
            print(f"{name:22s} {n:3d} {cols}  {speed:6.1f}x")


if __name__ == "__main__":
    main()
