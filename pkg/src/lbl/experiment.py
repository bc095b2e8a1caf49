"""One sweep cell: generate data, train one model, probe it.

Random streams (every entropy list ends in a non-zero tag):

* environment matrices: ``[seed, 0x5EED]``
* train / test trajectories: ``[seed, split, 0xDA7A]`` with split 1 / 2; shared
  by every model and scale so that cells differ only in sigma and model
* model initialization: ``[seed, scale_key, model_index, 0x1417]``
* per-step training noise: ``[seed, scale_key, model_index, step, 0x57E9]``

``scale_key`` is ``round(1000 * sigma)`` and ``model_index`` the position in
``MODEL_KINDS``, so a cell's result does not depend on which other cells run.
"""
import time
from dataclasses import dataclass, replace

import numpy as np

from lbl.env import empirical_snr_db, make_env, rollout
from lbl.models import MODEL_KINDS, TrainConfig, make_model
from lbl.optim import TrainingDiverged, make_batch, train
from lbl.probe import ProbeReport, evaluate

T_TRAIN = 6000
T_TEST = 2000
DEFAULT_SCALES = tuple(float(s) for s in np.linspace(0.0, 8.0, 9))


def split_data(env, seed, sigma, t_train=T_TRAIN, t_test=T_TEST):
    tr = rollout(env, sigma, t_train, np.random.default_rng([seed, 1, 0xDA7A]))
    te = rollout(env, sigma, t_test, np.random.default_rng([seed, 2, 0xDA7A]))
    tr.seed = te.seed = seed
    return tr, te


def cell_key(seed, sigma, kind):
    return (int(seed), int(round(1000 * sigma)), MODEL_KINDS.index(kind))


@dataclass
class CellResult:
    sigma: float
    kind: str
    snr_db: float
    report: ProbeReport
    status: str = "ok"
    error: str | None = None
    model: object = None
    losses: np.ndarray | None = None


def run_cell(seed, sigma, kind, train_cfg=None, t_train=T_TRAIN, t_test=T_TEST, env=None, data=None):
    """Train ``kind`` at noise scale ``sigma`` and probe it on both splits."""
    env = make_env(seed) if env is None else env
    tr, te = split_data(env, seed, sigma, t_train, t_test) if data is None else data
    key = cell_key(seed, sigma, kind)
    cfg = replace(train_cfg or TrainConfig(), seed=key)
    model = make_model(kind, env.d_x, cfg, rng=np.random.default_rng([*key, 0x1417]))
    snr = empirical_snr_db(tr, env, sigma)
    t0 = time.perf_counter()
    try:
        res = train(model, make_batch(kind, tr.x), cfg)
    except TrainingDiverged as exc:
        report = ProbeReport(model=kind, sigma=float(sigma), signal_r2_train=float("nan"),
                             signal_r2_test=float("nan"), train_s=time.perf_counter() - t0, failed=True)
        return CellResult(float(sigma), kind, snr, report, status="diverged", error=str(exc), model=model)
    report = evaluate(model, tr, te, train_s=res.wall_time)
    status = "probe_failed" if report.failed else "ok"
    return CellResult(float(sigma), kind, snr, report, status=status, model=model, losses=res.losses)
