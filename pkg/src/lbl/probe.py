"""Linear-probe evaluation with next-step temporal alignment."""
import time
from dataclasses import dataclass, asdict

import numpy as np

from lbl.mathcore import solve_ols, with_intercept
from lbl.models import extract_probe_latent, probe_target_offset


class ProbeError(ValueError):
    pass


@dataclass
class ProbeReport:
    model: str
    sigma: float
    signal_r2_train: float
    signal_r2_test: float
    noise_r2_train: float | None = None
    noise_r2_test: float | None = None
    train_s: float = 0.0
    eval_s: float = 0.0
    failed: bool = False

    def as_dict(self):
        return asdict(self)


def r2(pred, target):
    """Pooled coefficient of determination over all output entries."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"r2: shape {pred.shape} vs {target.shape}")
    if target.shape[0] < 2:
        raise ValueError("r2 needs at least two rows")
    ss_tot = np.sum((target - target.mean(axis=0)) ** 2)
    if ss_tot == 0.0:
        raise ValueError("r2 undefined for a constant target")
    return float(1.0 - np.sum((target - pred) ** 2) / ss_tot)


class LinearProbe:
    """OLS map from latents to targets; sees only the arrays passed to ``fit``."""

    def fit(self, z, y):
        self.coef_ = solve_ols(with_intercept(z), y)
        return self

    def predict(self, z):
        return with_intercept(z) @ self.coef_


def aligned(kind, traj):
    """(probe inputs, signal targets, distractor targets) for one trajectory."""
    off = probe_target_offset(kind)
    n = len(traj) - off
    return traj.x[:n], traj.s[off:off + n], traj.d[off:off + n]


def _fit_score(z_tr, y_tr, z_te, y_te):
    probe = LinearProbe().fit(z_tr, y_tr)
    return r2(probe.predict(z_tr), y_tr), r2(probe.predict(z_te), y_te)


def evaluate(model, traj_train, traj_test, train_s=0.0):
    """Fit signal and distractor probes on the training split; score both splits."""
    t0 = time.perf_counter()
    x_tr, s_tr, d_tr = aligned(model.kind, traj_train)
    x_te, s_te, d_te = aligned(model.kind, traj_test)
    z_tr = extract_probe_latent(model, x_tr)
    z_te = extract_probe_latent(model, x_te)
    sigma = float(traj_train.scale)
    report = ProbeReport(model=model.kind, sigma=sigma, signal_r2_train=float("nan"),
                         signal_r2_test=float("nan"), train_s=train_s)
    if not (np.all(np.isfinite(z_tr)) and np.any(z_tr.std(axis=0) > 0)):
        report.failed = True
        report.eval_s = time.perf_counter() - t0
        return report
    try:
        report.signal_r2_train, report.signal_r2_test = _fit_score(z_tr, s_tr, z_te, s_te)
        if sigma > 0:
            report.noise_r2_train, report.noise_r2_test = _fit_score(z_tr, d_tr, z_te, d_te)
    except np.linalg.LinAlgError:
        report.failed = True
    report.eval_s = time.perf_counter() - t0
    return report
