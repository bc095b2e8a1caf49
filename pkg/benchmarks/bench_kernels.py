"""Time the compiled kernels against the numpy fallback on training-sized inputs.

Usage: ``python3 benchmarks/bench_kernels.py [--repeat N]``
"""
import argparse
import timeit

import numpy as np

from lbl import kernels


def cases(rng, n=6000, d=4):
    mu, lv, x = rng.standard_normal((3, n, d))
    lv *= 0.5
    z = rng.standard_normal((n, d))
    w = rng.random(10_000)
    w /= w.sum()
    p = rng.standard_normal((20, 4))
    g = rng.standard_normal((20, 4))
    return {
        "diag_nll_grad": lambda k: k.diag_nll_grad(mu, lv, x),
        "kl_diag_grad": lambda k: k.kl_diag_grad(mu, lv, mu[0], lv[0]),
        "vjepa_terms": lambda k: k.vjepa_terms(mu, lv, x, lv, z, 0.01),
        "vicreg_reg_grad": lambda k: k.vicreg_reg_grad(z, 25.0, 1.0),
        "adam_update": lambda k: k.adam_update(p.copy(), g, np.zeros_like(p), np.zeros_like(p),
                                               1e-3, 0.9, 0.999, 1e-8, 1),
        "systematic_resample": lambda k: k.systematic_resample(w, 0.37),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    impls = kernels.backends()
    if "cython" not in impls:
        print("compiled extension not built; only the numpy backend is available")
    names = list(impls)
    print(f"{'kernel':<22}" + "".join(f"{n + ' (us)':>16}" for n in names) + f"{'speedup':>10}")
    for name, fn in cases(np.random.default_rng(0)).items():
        times = {}
        for b, mod in impls.items():
            t = timeit.Timer(lambda: fn(mod)).repeat(repeat=5, number=args.repeat)
            times[b] = min(t) / args.repeat * 1e6
        row = f"{name:<22}" + "".join(f"{times[n]:>16.1f}" for n in names)
        if "cython" in times:
            row += f"{times['python'] / times['cython']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
