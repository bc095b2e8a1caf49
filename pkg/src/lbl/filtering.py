"""Sequential importance resampling over latent states, with a Kalman oracle.

The measurement step uses the target-encoder pseudo-likelihood
``q(z | x) / p_ref(z)`` with ``p_ref = N(0, I)``, so any object exposing
``predict_raw(z, u)`` and ``target(x)`` (a trained ``VJepaModel`` or a
``LinearGaussianLatent``) can be filtered.
"""
from dataclasses import dataclass

import numpy as np

from lbl import kernels


class DegenerateWeights(FloatingPointError):
    """Every particle received zero (or non-finite) weight."""


@dataclass(frozen=True)
class ParticleSet:
    particles: np.ndarray
    weights: np.ndarray
    step: int = 0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or len(w) != len(self.particles):
            raise ValueError("need one weight per particle")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be non-negative and sum to 1")

    @property
    def size(self):
        return len(self.weights)

    def ess(self):
        return float(1.0 / np.sum(self.weights ** 2))

    def mean(self):
        return self.weights @ self.particles

    def var(self):
        c = self.particles - self.mean()
        return self.weights @ (c * c)


def init_particles(m, d_z, rng):
    """``m`` equally weighted draws from the reference ``N(0, I)``."""
    return ParticleSet(rng.standard_normal((m, d_z)), np.full(m, 1.0 / m))


def pf_predict(ps, model, rng, u=None):
    """Propagate every particle through a draw from ``p(z' | z, u)``."""
    mu, lv_raw = model.predict_raw(ps.particles, u)
    lv, _ = kernels.clamp_logvar(lv_raw)
    z = mu + np.exp(0.5 * lv) * rng.standard_normal(mu.shape)
    return ParticleSet(z, ps.weights, ps.step + 1)


def log_pseudo_likelihood(model, z, x):
    """``log q(z | x) - log N(z; 0, I)`` for each particle."""
    q = model.target(np.asarray(x, dtype=np.float64)[None, :])
    r = z - q.mean
    log_q = -np.sum(kernels.HALF_LOG_2PI + 0.5 * q.log_var + 0.5 * r * r * np.exp(-q.log_var), axis=-1)
    log_ref = -np.sum(kernels.HALF_LOG_2PI + 0.5 * z * z, axis=-1)
    return log_q - log_ref


def pf_update(ps, model, x_next):
    """Reweight by the pseudo-likelihood in log space and renormalize."""
    with np.errstate(divide="ignore"):
        logw = np.log(ps.weights) + log_pseudo_likelihood(model, ps.particles, x_next)
    top = np.max(logw)
    if not np.isfinite(top):
        raise DegenerateWeights(f"degenerate weight update at step {ps.step}: max log-weight {top}")
    w = np.exp(logw - top)
    return ParticleSet(ps.particles, w / w.sum(), ps.step)


def pf_resample(ps, rng, threshold=0.5):
    """Systematic resampling when ``ESS < threshold * M``; otherwise unchanged.

    Returns ``(particle_set, resampled)``.
    """
    m = ps.size
    if ps.ess() >= threshold * m:
        return ps, False
    idx = kernels.systematic_resample(ps.weights, rng.uniform())
    return ParticleSet(ps.particles[idx], np.full(m, 1.0 / m), ps.step), True


@dataclass
class FilterRun:
    means: np.ndarray
    variances: np.ndarray
    ess: np.ndarray
    resampled: np.ndarray


def run_particle_filter(model, xs, m, rng, us=None):
    """Filter a whole observation sequence starting from ``N(0, I)`` particles.

    Step 0 only applies the measurement update; each later step predicts and then
    updates. Estimates are taken after the update and before resampling.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ps = init_particles(m, model.d_z, rng)
    n = len(xs)
    means = np.empty((n, model.d_z))
    variances = np.empty((n, model.d_z))
    ess = np.empty(n)
    resampled = np.zeros(n, dtype=bool)
    for t in range(n):
        if t > 0:
            ps = pf_predict(ps, model, rng, None if us is None else us[t - 1])
        ps = pf_update(ps, model, xs[t])
        means[t], variances[t], ess[t] = ps.mean(), ps.var(), ps.ess()
        ps, resampled[t] = pf_resample(ps, rng)
    return FilterRun(means, variances, ess, resampled)


def kalman_filter(A, Q, H, R, xs, m0, P0, B=None, us=None):
    """Exact linear-Gaussian filter with the same step-0 convention as the particle filter.

    Returns filtered means ``(T, d)`` and covariances ``(T, d, d)``.
    """
    A, Q, H, R = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (A, Q, H, R))
    xs = np.asarray(xs, dtype=np.float64).reshape(len(xs), -1)
    m = np.asarray(m0, dtype=np.float64).reshape(-1)
    P = np.atleast_2d(np.asarray(P0, dtype=np.float64))
    means, covs = [], []
    for t, x in enumerate(xs):
        if t > 0:
            m = A @ m
            if B is not None and us is not None:
                m = m + np.atleast_2d(B) @ np.atleast_1d(us[t - 1])
            P = A @ P @ A.T + Q
        S = H @ P @ H.T + R
        K = np.linalg.solve(S, H @ P).T
        m = m + K @ (x - H @ m)
        P = P - K @ S @ K.T
        P = 0.5 * (P + P.T)
        means.append(m)
        covs.append(P)
    return np.array(means), np.array(covs)


def scalar_system(a=0.9, q=0.1, r=0.5):
    """1-D latent model whose pseudo-likelihood equals ``N(x; z, r)``.

    The target head ``q(z | x) = N(x / (1 + r), r / (1 + r))`` divided by ``N(0, 1)``
    is proportional to the observation density of ``x = z + v``, ``v ~ N(0, r)``.
    """
    from lbl.models import LinearGaussianLatent

    return LinearGaussianLatent([[a]], process_var=q, target_gain=[[1.0 / (1.0 + r)]],
                                target_var=r / (1.0 + r))


def simulate_scalar(a, q, r, T, rng):
    """Latent path (from ``N(0, 1)``) and observations of the scalar system."""
    z = np.empty(T)
    z[0] = rng.standard_normal()
    for t in range(1, T):
        z[t] = a * z[t - 1] + np.sqrt(q) * rng.standard_normal()
    return z, z + np.sqrt(r) * rng.standard_normal(T)
