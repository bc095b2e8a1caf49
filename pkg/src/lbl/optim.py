"""Adam and the full-batch training loop."""
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from lbl import kernels
from lbl.models import ema_step, loss_and_grad, step_rng

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, step, loss, terms):
        self.step = step
        self.loss = loss
        self.terms = terms
        super().__init__(f"non-finite loss {loss!r} at step {step}; terms={terms}")


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """Advance ``state.t`` and update every array in ``params`` in place."""
    state.t += 1
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        kernels.adam_update(p, np.ascontiguousarray(g, dtype=np.float64), state.m[name], state.v[name],
                            state.lr, state.beta1, state.beta2, state.eps, state.t)


def make_batch(kind, x, u=None):
    """Full-batch arrays for one trajectory (or a list of episodes)."""
    if isinstance(x, (list, tuple)):
        parts = [make_batch(kind, xi, ui) for xi, ui in zip(x, u if u is not None else [None] * len(x))]
        return tuple(np.vstack([p[i] for p in parts]) for i in range(len(parts[0])))
    if kind == "vae":
        return (x, x)
    if u is not None:
        return (x[:-1], x[1:], u)
    return (x[:-1], x[1:])


@dataclass
class TrainResult:
    model: object
    losses: np.ndarray
    terms: list
    wall_time: float


def train(model, batch, cfg):
    """Run ``cfg.steps`` full-batch Adam steps, with EMA after each step.

    ``batch`` comes from ``make_batch``. Noise for step ``k`` is drawn from
    ``step_rng(cfg.seed, k)``. Raises ``TrainingDiverged`` on a non-finite loss.
    """
    state = AdamState(lr=cfg.lr)
    batch = tuple(np.ascontiguousarray(b, dtype=np.float64) for b in batch)
    losses = np.empty(cfg.steps)
    terms = []
    t0 = time.perf_counter()
    for k in range(cfg.steps):
        # overflow shows up as a non-finite loss, checked below
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads, parts = loss_and_grad(model, batch, step_rng(cfg.seed, k))
        if not np.isfinite(loss):
            raise TrainingDiverged(k, loss, parts)
        adam_step(model.params, grads, state)
        ema_step(model, cfg.ema_tau)
        losses[k] = loss
        terms.append(parts)
    wall = time.perf_counter() - t0
    log.debug("trained %s for %d steps in %.2fs", model.kind, cfg.steps, wall)
    return TrainResult(model, losses, terms, wall)


def write_loss_csv(result, path):
    names = list(result.terms[0]) if result.terms else []
    with open(path, "w") as fh:
        fh.write(",".join(["step", "loss", *names]) + "\n")
        for k, (loss, parts) in enumerate(zip(result.losses, result.terms)):
            fh.write(",".join([str(k), repr(float(loss)), *(repr(float(parts[n])) for n in names)]) + "\n")
