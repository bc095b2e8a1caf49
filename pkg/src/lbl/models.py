"""The five linear models compared on the Noisy-TV benchmark.

All maps are bias-free linear layers stored as ``(out_dim, in_dim)`` weight
matrices in ``model.params``. Losses return ``(loss, grads, terms)`` where
``grads`` mirrors ``params`` and ``terms`` is an ordered breakdown of the loss.

Parameters updated by exponential moving average live in ``model.ema`` and
never receive gradients:

* JEPA: ``target_enc`` tracks ``enc``.
* VJEPA/BJEPA: ``target_mu`` tracks ``enc``; ``target_logvar`` is an ordinary
  gradient-trained parameter.
"""
from dataclasses import dataclass

import numpy as np

from lbl import kernels
from lbl.mathcore import DiagGaussian, poe_fuse

MODEL_KINDS = ("vae", "ar", "jepa", "vjepa", "bjepa")
D_Z = 4
STEP_TAG = 0x57E9


@dataclass
class TrainConfig:
    lr: float = 1e-3
    steps: int = 6000
    ema_tau: float = 0.99
    beta: float = 0.01
    gamma: float = 0.1
    vae_beta: float = 0.01
    vicreg: tuple = (25.0, 25.0, 1.0)
    seed: int | tuple = 111


def init_weight(rng, out_dim, in_dim):
    return rng.standard_normal((out_dim, in_dim)) / np.sqrt(in_dim)


def step_rng(seed, step):
    """Noise substream for one training step; replayable for gradient checks.

    ``seed`` is an integer or a tuple of integers (e.g. a sweep-cell key). The
    entropy list ends in a fixed non-zero tag because ``SeedSequence`` treats
    trailing zeros as absent (``[5, 1]`` and ``[5, 1, 0]`` seed the same stream).
    """
    return np.random.default_rng([*(int(s) for s in np.atleast_1d(seed)), int(step), STEP_TAG])


class Model:
    kind = ""

    def __init__(self):
        self.params = {}
        self.ema = {}
        self.ema_sources = {}
        self.config = {}

    def copy(self):
        new = object.__new__(type(self))
        new.__dict__.update(self.__dict__)
        new.params = {k: v.copy() for k, v in self.params.items()}
        new.ema = {k: v.copy() for k, v in self.ema.items()}
        new.ema_sources = dict(self.ema_sources)
        new.config = dict(self.config)
        return new

    def state(self):
        """All named arrays, EMA copies included."""
        return {**self.params, **self.ema}


class VaeModel(Model):
    kind = "vae"

    def __init__(self, d_x, d_z=D_Z, beta=0.01, rng=None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.beta = beta
        self.params = {
            "enc_mu": init_weight(rng, d_z, d_x),
            "enc_logvar": init_weight(rng, d_z, d_x),
            "dec": init_weight(rng, d_x, d_z),
        }
        self.config = dict(d_x=d_x, d_z=d_z, beta=beta)


class ArModel(Model):
    kind = "ar"

    def __init__(self, d_x, d_z=D_Z, rng=None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.params = {"enc": init_weight(rng, d_z, d_x), "pred": init_weight(rng, d_x, d_z)}
        self.config = dict(d_x=d_x, d_z=d_z)


class JepaModel(Model):
    kind = "jepa"

    def __init__(self, d_x, d_z=D_Z, vicreg=(25.0, 25.0, 1.0), rng=None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.vicreg = tuple(vicreg)
        self.params = {"enc": init_weight(rng, d_z, d_x), "pred": init_weight(rng, d_z, d_z)}
        self.ema = {"target_enc": self.params["enc"].copy()}
        self.ema_sources = {"target_enc": "enc"}
        self.config = dict(d_x=d_x, d_z=d_z, vicreg=list(self.vicreg))


class VJepaModel(Model):
    """Variational latent predictor; ``d_u > 0`` makes the mean head action-conditioned.

    The mean head reads ``[z; u]``; the log-variance head reads ``z`` only, so the
    predictive covariance never depends on the action.
    """

    kind = "vjepa"

    def __init__(self, d_x, d_z=D_Z, beta=0.01, d_u=0, rng=None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.beta = beta
        self.d_u = d_u
        self.params = {
            "enc": init_weight(rng, d_z, d_x),
            "pred_mu": init_weight(rng, d_z, d_z + d_u),
            "pred_logvar": np.zeros((d_z, d_z)),
            "target_logvar": np.zeros((d_z, d_x)),
        }
        self.ema = {"target_mu": self.params["enc"].copy()}
        self.ema_sources = {"target_mu": "enc"}
        self.config = dict(d_x=d_x, d_z=d_z, beta=beta, d_u=d_u)

    @property
    def d_z(self):
        return self.params["enc"].shape[0]

    def encode(self, x):
        return np.asarray(x) @ self.params["enc"].T

    def predict_raw(self, z, u=None):
        z = np.asarray(z, dtype=np.float64)
        inp = z
        if self.d_u:
            if u is None:
                u = np.zeros(z.shape[:-1] + (self.d_u,))
            inp = np.concatenate([z, np.broadcast_to(u, z.shape[:-1] + (self.d_u,))], axis=-1)
        return inp @ self.params["pred_mu"].T, z @ self.params["pred_logvar"].T

    def predict(self, z, u=None):
        """Predictive distribution p(z' | z, u)."""
        mu, lv = self.predict_raw(z, u)
        return DiagGaussian(mu, lv)

    def target(self, x):
        """Target-encoder distribution q(z | x)."""
        x = np.asarray(x)
        return DiagGaussian(x @ self.ema["target_mu"].T, x @ self.params["target_logvar"].T)

    def mean_step(self, z, u=None):
        return self.predict_raw(z, u)[0]

    def mean_jacobians(self):
        """(d mu / d z, d mu / d u); the mean head is linear so both are constant."""
        w = self.params["pred_mu"]
        return w[:, :self.d_z], w[:, self.d_z:]


class BJepaModel(VJepaModel):
    kind = "bjepa"

    def __init__(self, d_x, d_z=D_Z, beta=0.01, gamma=0.1, d_u=0, rng=None):
        super().__init__(d_x, d_z=d_z, beta=beta, d_u=d_u, rng=rng)
        self.gamma = gamma
        self.params["prior_mu"] = np.zeros(d_z)
        self.params["prior_logvar"] = np.zeros(d_z)
        self.config["gamma"] = gamma

    def prior(self):
        return DiagGaussian(self.params["prior_mu"], self.params["prior_logvar"])


class LinearGaussianLatent:
    """Known linear-Gaussian latent model exposing the VJEPA predictor/target interface.

    ``z' = A z + B u + w`` with ``w ~ N(0, diag(process_var))``; the target head is
    ``q(z | x) = N(K x, diag(target_var))``. Used as an oracle stand-in for a
    trained model by the planning and filtering checks.
    """

    kind = "linear"

    def __init__(self, A, B=None, process_var=1.0, target_gain=None, target_var=1.0):
        self.A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        d = self.A.shape[0]
        self.B = np.zeros((d, 0)) if B is None else np.asarray(B, dtype=np.float64).reshape(d, -1)
        self.d_u = self.B.shape[1]
        self.log_q = np.log(np.broadcast_to(np.asarray(process_var, dtype=np.float64), (d,))).copy()
        self.K = np.eye(d) if target_gain is None else np.atleast_2d(np.asarray(target_gain, dtype=np.float64))
        self.log_v = np.log(np.broadcast_to(np.asarray(target_var, dtype=np.float64), (d,))).copy()

    @property
    def d_z(self):
        return self.A.shape[0]

    def predict_raw(self, z, u=None):
        z = np.asarray(z, dtype=np.float64)
        mu = z @ self.A.T
        if self.d_u and u is not None:
            mu = mu + np.asarray(u, dtype=np.float64) @ self.B.T
        return mu, np.broadcast_to(self.log_q, mu.shape).copy()

    def predict(self, z, u=None):
        return DiagGaussian(*self.predict_raw(z, u))

    def mean_step(self, z, u=None):
        return self.predict_raw(z, u)[0]

    def mean_jacobians(self):
        return self.A, self.B

    def target(self, x):
        mean = np.asarray(x, dtype=np.float64) @ self.K.T
        return DiagGaussian(mean, np.broadcast_to(self.log_v, mean.shape).copy())


def make_model(kind, d_x, cfg=None, rng=None, d_u=0):
    cfg = TrainConfig() if cfg is None else cfg
    if kind == "vae":
        return VaeModel(d_x, beta=cfg.vae_beta, rng=rng)
    if kind == "ar":
        return ArModel(d_x, rng=rng)
    if kind == "jepa":
        return JepaModel(d_x, vicreg=cfg.vicreg, rng=rng)
    if kind == "vjepa":
        return VJepaModel(d_x, beta=cfg.beta, d_u=d_u, rng=rng)
    if kind == "bjepa":
        return BJepaModel(d_x, beta=cfg.beta, gamma=cfg.gamma, d_u=d_u, rng=rng)
    raise ValueError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# losses and analytic gradients
# ---------------------------------------------------------------------------

def _check_pairs(a, b):
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"misaligned batches: {a.shape[0]} vs {b.shape[0]} rows")


def vae_loss_and_grad(m, x, rng):
    """Batch mean of ``||x - dec(z)||^2 + beta KL(q(z|x) || N(0, I))``, one sample per row."""
    p = m.params
    n = x.shape[0]
    mu = x @ p["enc_mu"].T
    lv, mask = kernels.clamp_logvar(x @ p["enc_logvar"].T)
    s = np.exp(0.5 * lv)
    eps = rng.standard_normal(mu.shape)
    z = mu + s * eps
    r = z @ p["dec"].T - x
    rec = float(np.sum(r * r)) / n
    kl = 0.5 * float(np.sum(mu * mu + s * s - lv - 1.0)) / n
    g_r = (2.0 / n) * r
    g_z = g_r @ p["dec"]
    g_mu = g_z + (m.beta / n) * mu
    g_lv = (g_z * eps * 0.5 * s + (m.beta / n) * 0.5 * (s * s - 1.0)) * mask
    grads = {"enc_mu": g_mu.T @ x, "enc_logvar": g_lv.T @ x, "dec": g_r.T @ z}
    return rec + m.beta * kl, grads, {"recon": rec, "kl": kl}


def ar_loss_and_grad(m, x_t, x_next):
    """Batch mean of ``||x_next - pred(enc(x_t))||^2``."""
    _check_pairs(x_t, x_next)
    p = m.params
    n = x_t.shape[0]
    z = x_t @ p["enc"].T
    r = z @ p["pred"].T - x_next
    loss = float(np.sum(r * r)) / n
    g_r = (2.0 / n) * r
    grads = {"pred": g_r.T @ z, "enc": (g_r @ p["pred"]).T @ x_t}
    return loss, grads, {"mse": loss}


def jepa_loss_and_grad(m, x_t, x_next):
    """VICReg-regularized latent regression against the frozen target encoder."""
    _check_pairs(x_t, x_next)
    n = x_t.shape[0]
    if n < 2:
        raise ValueError("JEPA loss needs a batch of at least 2 rows")
    p = m.params
    inv_c, var_c, cov_c = m.vicreg
    z = x_t @ p["enc"].T
    pred = z @ p["pred"].T
    tgt = x_next @ m.ema["target_enc"].T
    d_z = z.shape[1]
    r = pred - tgt
    inv = float(np.sum(r * r)) / (n * d_z)
    hinge, cov, g_z = kernels.vicreg_reg_grad(z, var_c, cov_c)
    g_pred = (2.0 * inv_c / (n * d_z)) * r
    g_z = g_z + g_pred @ p["pred"]
    grads = {"pred": g_pred.T @ z, "enc": g_z.T @ x_t}
    loss = inv_c * inv + var_c * hinge + cov_c * cov
    return loss, grads, {"invariance": inv, "variance": hinge, "covariance": cov}


def _vjepa_core(m, x_t, x_next, rng, u=None):
    p = m.params
    n = x_t.shape[0]
    z_c = x_t @ p["enc"].T
    if m.d_u:
        if u is None:
            raise ValueError("action-conditioned model needs actions")
        _check_pairs(x_t, u)
        inp = np.hstack([z_c, u])
    else:
        inp = z_c
    p_mu = inp @ p["pred_mu"].T
    p_lv_raw = z_c @ p["pred_logvar"].T
    q_mu = x_next @ m.ema["target_mu"].T
    q_lv_raw = x_next @ p["target_logvar"].T
    eps = rng.standard_normal(q_mu.shape)
    nll, kl, g_pmu, g_plv, g_qlv = kernels.vjepa_terms(p_mu, p_lv_raw, q_mu, q_lv_raw, eps, m.beta)
    return dict(n=n, z_c=z_c, inp=inp, p_mu=p_mu, p_lv_raw=p_lv_raw, nll=nll / n, kl=kl / n,
                g_pmu=g_pmu, g_plv=g_plv, g_qlv=g_qlv)


def _vjepa_grads(m, c, x_t, x_next):
    p = m.params
    n = c["n"]
    d_z = c["z_c"].shape[1]
    g_pmu = c["g_pmu"] / n
    g_plv = c["g_plv"] / n
    g_z = g_pmu @ p["pred_mu"][:, :d_z] + g_plv @ p["pred_logvar"]
    return {
        "enc": g_z.T @ x_t,
        "pred_mu": g_pmu.T @ c["inp"],
        "pred_logvar": g_plv.T @ c["z_c"],
        "target_logvar": (c["g_qlv"] / n).T @ x_next,
    }


def vjepa_loss_and_grad(m, x_t, x_next, rng, u=None):
    """Single-sample regularized NLL of a reparameterized target draw."""
    _check_pairs(x_t, x_next)
    c = _vjepa_core(m, x_t, x_next, rng, u)
    grads = _vjepa_grads(m, c, x_t, x_next)
    return c["nll"] + m.beta * c["kl"], grads, {"nll": c["nll"], "kl": c["kl"]}


def bjepa_loss_and_grad(m, x_t, x_next, rng, u=None):
    """VJEPA loss plus ``gamma * KL(p_like || static prior)`` averaged over the batch."""
    _check_pairs(x_t, x_next)
    p = m.params
    c = _vjepa_core(m, x_t, x_next, rng, u)
    n = c["n"]
    lv_like, mask_like = kernels.clamp_logvar(c["p_lv_raw"])
    lv_prior, mask_prior = kernels.clamp_logvar(p["prior_logvar"])
    kl_p, g_mu1, g_lv1, g_mu2, g_lv2 = kernels.kl_diag_grad(c["p_mu"], lv_like, p["prior_mu"], lv_prior)
    w = m.gamma / n
    c["g_pmu"] = c["g_pmu"] + m.gamma * g_mu1
    c["g_plv"] = c["g_plv"] + m.gamma * g_lv1 * mask_like
    grads = _vjepa_grads(m, c, x_t, x_next)
    grads["prior_mu"] = w * g_mu2
    grads["prior_logvar"] = w * g_lv2 * mask_prior
    kl_p /= n
    loss = c["nll"] + m.beta * c["kl"] + m.gamma * kl_p
    return loss, grads, {"nll": c["nll"], "kl": c["kl"], "prior_kl": kl_p}


def loss_and_grad(m, batch, rng):
    """Dispatch on model kind; ``batch`` is ``(x_t, x_next)`` or ``(x_t, x_next, u)``."""
    x_t, x_next = batch[0], batch[1]
    u = batch[2] if len(batch) > 2 else None
    if m.kind == "vae":
        return vae_loss_and_grad(m, x_t, rng)
    if m.kind == "ar":
        return ar_loss_and_grad(m, x_t, x_next)
    if m.kind == "jepa":
        return jepa_loss_and_grad(m, x_t, x_next)
    if m.kind == "vjepa":
        return vjepa_loss_and_grad(m, x_t, x_next, rng, u)
    if m.kind == "bjepa":
        return bjepa_loss_and_grad(m, x_t, x_next, rng, u)
    raise ValueError(f"unknown model kind {m.kind!r}")


def ema_update(target, online, tau):
    """In place: ``target <- tau * target + (1 - tau) * online``."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    if target.shape != online.shape:
        raise ValueError(f"EMA shape mismatch {target.shape} vs {online.shape}")
    target *= tau
    target += (1.0 - tau) * online


def ema_step(m, tau):
    for name, src in m.ema_sources.items():
        ema_update(m.ema[name], m.params[src], tau)


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

def bjepa_infer(m, z_t, prior, u=None):
    """Hard fusion of the dynamics expert with a (swappable) task prior."""
    return poe_fuse(m.predict(z_t, u), prior)


def extract_probe_latent(m, x):
    """Latent used by the linear probe for each model kind."""
    x = np.asarray(x, dtype=np.float64)
    p = m.params
    if m.kind == "vae":
        return x @ p["enc_mu"].T
    if m.kind == "ar":
        return x @ p["enc"].T
    if m.kind == "jepa":
        return (x @ p["enc"].T) @ p["pred"].T
    if m.kind == "vjepa":
        return m.predict_raw(m.encode(x))[0]
    if m.kind == "bjepa":
        return bjepa_infer(m, m.encode(x), m.prior()).mean
    raise ValueError(f"unknown model kind {m.kind!r}")


def probe_target_offset(kind):
    """0 if the probe latent at t describes s[t], 1 if it describes s[t+1]."""
    return 0 if kind == "vae" else 1
