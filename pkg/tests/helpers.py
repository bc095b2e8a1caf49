"""Shared oracles for the unit and acceptance tests."""
import numpy as np

from lbl.models import MODEL_KINDS, loss_and_grad, make_model, step_rng


def central_difference(f, params, h=1e-5):
    """Central finite-difference gradient of scalar ``f()`` w.r.t. every array in ``params``."""
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            fp = f()
            p[i] = old - h
            fm = f()
            p[i] = old
            g[i] = (fp - fm) / (2 * h)
        out[name] = g
    return out


def rel_error(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-300))


def random_instance(kind, seed, d_x=6, n=9, d_u=0):
    """Small model with every parameter (EMA copies too) randomized, plus a batch."""
    rng = np.random.default_rng([seed, MODEL_KINDS.index(kind), d_u, 0x6AD])
    m = make_model(kind, d_x, rng=rng, d_u=d_u)
    for k, v in m.params.items():
        v[...] = rng.standard_normal(v.shape) * (0.3 if "logvar" in k else 0.8)
    for v in m.ema.values():
        v[...] = rng.standard_normal(v.shape) * 0.8
    x = rng.standard_normal((n + 1, d_x))
    batch = (x, x) if kind == "vae" else (x[:-1], x[1:])
    if d_u:
        batch = batch + (rng.standard_normal((n, d_u)),)
    return m, batch


def gradient_check(kind, seed, d_u=0, h=1e-5):
    """Worst per-parameter relative error between analytic and finite-difference gradients.

    The stochastic losses replay one noise stream in every evaluation.
    """
    m, batch = random_instance(kind, seed, d_u=d_u)

    def f():
        return loss_and_grad(m, batch, step_rng(seed, 0))[0]

    _, grads, _ = loss_and_grad(m, batch, step_rng(seed, 0))
    fd = central_difference(f, m.params, h)
    return max(rel_error(grads[k], fd[k]) for k in m.params)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = {}


def record(n, ok, detail):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
    return line
