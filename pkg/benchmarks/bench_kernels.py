"""Compare the numba and numpy kernel backends on realistic inputs.

    python benchmarks/bench_kernels.py [--repeat 5]

Inputs: the ground-vehicle moment system (term values and gradients at one
parameter point), a batch evaluation of the same table, and Monte Carlo
moment sums for 65536 samples of the six basis functions up to order 4.
"""
import argparse
import time

import numpy as np

from momentplan import kernels, scenario
from momentplan.nlp import assemble
from momentplan.propagation import _layout


def best_of(fn, repeat):
    fn()  # warm-up (triggers JIT compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    p = assemble(scenario.load(scenario.bundled("ground_vehicle")))
    ct = p.system._compiled
    x = ct.atom_scale * np.array([0.3, -0.2, 0.0])[ct.atom_base]
    gen = np.random.default_rng(0)
    X = gen.normal(size=(2000, len(x)))
    B = gen.normal(size=(65536, len(p.basis)))
    E = np.array(_layout(len(p.basis), 4), dtype=np.int64)
    args = (ct.coef, ct.P, ct.C, ct.S)
    return {
        f"term_values_and_grads (K={len(ct.coef)})": ("term_values_and_grads", args + (x,)),
        f"eval_batch (K={len(ct.coef)}, N=2000)": ("eval_batch", args + (X,)),
        f"moment_sums (N=65536, M={len(E)})": ("moment_sums", (B, E)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = list(kernels.IMPLEMENTATIONS)
    print(f"backends: {', '.join(backends)} (active: {kernels.BACKEND})")
    print(f"{'kernel':48s}" + "".join(f"{b:>12s}" for b in backends) + "     speedup")
    for label, (name, a) in cases().items():
        t = {b: best_of(lambda b=b: kernels.IMPLEMENTATIONS[b][name](*a), args.repeat) for b in backends}
        row = f"{label:48s}" + "".join(f"{t[b] * 1e3:10.2f}ms" for b in backends)
        if "numba" in t:
            row += f"   {t['numpy'] / t['numba']:8.1f}x"
        print(row)


if __name__ == "__main__":
    main()
