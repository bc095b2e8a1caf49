"""Diagonal-Gaussian algebra and small dense-linear-algebra helpers.

``DiagGaussian`` is the belief/prediction currency used everywhere else. Its
fields may carry leading batch axes; the last axis is the event dimension and
every reduction sums over it.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from lbl.kernels import HALF_LOG_2PI, LOGVAR_MAX, LOGVAR_MIN

OLS_RIDGE = 1e-8
MAX_COND = 1e12


class DimensionError(ValueError):
    """Raised when operands are not conformable."""


def _check_same_shape(a, b, what):
    if np.shape(a) != np.shape(b):
        raise DimensionError(f"{what}: shape {np.shape(a)} vs {np.shape(b)}")


def _finite(name, arr):
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class DiagGaussian:
    """Gaussian with diagonal covariance, parameterized by mean and log-variance.

    Log-variances are clamped to ``[-10, 10]`` at construction.
    """

    mean: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        mean = _finite("mean", self.mean)
        log_var = _finite("log_var", self.log_var)
        if mean.ndim == 0 or mean.shape[-1] < 1:
            raise DimensionError("DiagGaussian needs event dimension >= 1")
        _check_same_shape(mean, log_var, "DiagGaussian")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "log_var", np.clip(log_var, LOGVAR_MIN, LOGVAR_MAX))

    @classmethod
    def standard(cls, d):
        return cls(np.zeros(d), np.zeros(d))

    @property
    def dim(self):
        return self.mean.shape[-1]

    @property
    def var(self):
        return np.exp(self.log_var)

    @property
    def precision(self):
        return np.exp(-self.log_var)

    def entropy(self):
        return np.sum(HALF_LOG_2PI + 0.5 + 0.5 * self.log_var, axis=-1)


def gaussian_nll(g, x):
    """Negative log-density of ``x`` under ``g`` (summed over the event axis)."""
    x = np.asarray(x, dtype=np.float64)
    _check_same_shape(g.mean, x, "gaussian_nll")
    r = x - g.mean
    return np.sum(HALF_LOG_2PI + 0.5 * g.log_var + 0.5 * r * r * np.exp(-g.log_var), axis=-1)


def kl_to_standard(g):
    """KL(g || N(0, I))."""
    return 0.5 * np.sum(g.mean ** 2 + np.exp(g.log_var) - g.log_var - 1.0, axis=-1)


def kl_diag(g1, g2):
    """Closed-form KL(g1 || g2) between diagonal Gaussians."""
    _check_same_shape(g1.mean, g2.mean, "kl_diag")
    d = g1.mean - g2.mean
    return 0.5 * np.sum(
        g2.log_var - g1.log_var + (np.exp(g1.log_var) + d * d) * np.exp(-g2.log_var) - 1.0,
        axis=-1,
    )


def poe_fuse(g1, g2):
    """Normalized product of two diagonal Gaussian densities.

    Precisions add; the mean is the precision-weighted average of the input
    means. A single-row operand broadcasts against a batched one.
    """
    if g1.dim != g2.dim:
        raise DimensionError(f"poe_fuse: dimension {g1.dim} vs {g2.dim}")
    p1, p2 = g1.precision, g2.precision
    prec = p1 + p2
    mean = (p1 * g1.mean + p2 * g2.mean) / prec
    return DiagGaussian(mean, -np.log(prec))


def sample(g, rng):
    """Reparameterized draw ``mean + exp(log_var / 2) * eps``."""
    eps = rng.standard_normal(g.mean.shape)
    return g.mean + np.exp(0.5 * g.log_var) * eps


def expected_quadratic_cost(g, Q, z_star):
    """E[(Z - z*)^T Q (Z - z*)] for Z ~ g: mean term plus ``tr(Q diag(var))``."""
    Q = np.asarray(Q, dtype=np.float64)
    z_star = np.asarray(z_star, dtype=np.float64)
    d = g.dim
    if Q.shape != (d, d) or z_star.shape[-1] != d:
        raise DimensionError(f"expected_quadratic_cost: Q {Q.shape}, z* {z_star.shape}, d={d}")
    e = g.mean - z_star
    quad = np.einsum("...i,ij,...j->...", e, Q, e)
    return quad + np.sum(np.diag(Q) * np.exp(g.log_var), axis=-1)


def _logdet_spd(m):
    sign, logdet = np.linalg.slogdet(m)
    if sign <= 0:
        raise np.linalg.LinAlgError("matrix is not positive definite")
    return logdet


def gaussian_mutual_information(cov_joint, d1, d2):
    """Analytic I(Z1; Z2) for a jointly Gaussian pair with joint covariance ``cov_joint``.

    Raises ``np.linalg.LinAlgError`` when the covariance is singular or its
    condition number exceeds 1e12.
    """
    cov = np.asarray(cov_joint, dtype=np.float64)
    if cov.shape != (d1 + d2, d1 + d2):
        raise DimensionError(f"cov_joint shape {cov.shape} != ({d1 + d2}, {d1 + d2})")
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
        raise ValueError("cov_joint is not symmetric")
    cond = np.linalg.cond(cov)
    if not np.isfinite(cond) or cond > MAX_COND:
        raise np.linalg.LinAlgError(f"cov_joint is (near-)singular, cond={cond:.3g}")
    return 0.5 * (_logdet_spd(cov[:d1, :d1]) + _logdet_spd(cov[d1:, d1:]) - _logdet_spd(cov))


def gaussian_conditional(cov_joint, d1, mean_joint=None):
    """Exact conditional of Z2 given Z1 as ``(A, b, S)``: ``Z2 | z1 ~ N(A z1 + b, S)``."""
    cov = np.asarray(cov_joint, dtype=np.float64)
    mean = np.zeros(cov.shape[0]) if mean_joint is None else np.asarray(mean_joint, dtype=np.float64)
    s11, s12 = cov[:d1, :d1], cov[:d1, d1:]
    s22 = cov[d1:, d1:]
    A = np.linalg.solve(s11, s12).T
    b = mean[d1:] - A @ mean[:d1]
    S = s22 - A @ s12
    return A, b, 0.5 * (S + S.T)


def variational_mi_bound(cov_joint, d1, A, b, S, mean_joint=None):
    """E[log p(Z2 | Z1)] + H(Z2) for a linear-Gaussian predictor ``N(A z1 + b, S)``.

    The expectation is taken in closed form under the joint Gaussian, so the
    value is exact; it never exceeds the mutual information and equals it when
    the predictor is the true conditional.
    """
    cov = np.asarray(cov_joint, dtype=np.float64)
    mean = np.zeros(cov.shape[0]) if mean_joint is None else np.asarray(mean_joint, dtype=np.float64)
    d2 = cov.shape[0] - d1
    # residual r = z2 - A z1 - b is Gaussian with these moments
    M = np.hstack([-A, np.eye(d2)])
    r_mean = M @ mean - b
    r_cov = M @ cov @ M.T
    S_inv = np.linalg.inv(S)
    exp_log_p = -0.5 * (
        d2 * np.log(2 * np.pi) + _logdet_spd(S) + np.trace(S_inv @ r_cov) + r_mean @ S_inv @ r_mean
    )
    h2 = 0.5 * (d2 * np.log(2 * np.pi * np.e) + _logdet_spd(cov[d1:, d1:]))
    return exp_log_p + h2


def variational_mi_bound_mc(cov_joint, d1, A, b, S, rng, n_samples=100_000, mean_joint=None):
    """Monte-Carlo estimate of ``variational_mi_bound``; returns ``(estimate, std_error)``."""
    cov = np.asarray(cov_joint, dtype=np.float64)
    mean = np.zeros(cov.shape[0]) if mean_joint is None else np.asarray(mean_joint, dtype=np.float64)
    d2 = cov.shape[0] - d1
    z = rng.multivariate_normal(mean, cov, size=n_samples)
    r = z[:, d1:] - z[:, :d1] @ A.T - b
    L = np.linalg.cholesky(S)
    w = scipy.linalg.solve_triangular(L, r.T, lower=True)
    log_p = -0.5 * (d2 * np.log(2 * np.pi) + 2 * np.sum(np.log(np.diag(L))) + np.sum(w * w, axis=0))
    h2 = 0.5 * (d2 * np.log(2 * np.pi * np.e) + _logdet_spd(cov[d1:, d1:]))
    return float(log_p.mean() + h2), float(log_p.std(ddof=1) / np.sqrt(n_samples))


def solve_ols(X, Y, ridge=OLS_RIDGE):
    """Least-squares coefficients via ridge-damped normal equations.

    ``X`` is N x (p+1) and should already include the intercept column. Raises
    ``np.linalg.LinAlgError`` if the damped Gram matrix is still numerically
    singular.
    """
    X = _finite("X", X)
    Y = _finite("Y", Y)
    if X.shape[0] != Y.shape[0]:
        raise DimensionError(f"solve_ols: {X.shape[0]} rows vs {Y.shape[0]}")
    if X.shape[0] <= X.shape[1] - 1:
        raise DimensionError("solve_ols needs N > p")
    gram = X.T @ X
    gram[np.diag_indices_from(gram)] += ridge
    if np.linalg.cond(gram) > 1e15:
        raise np.linalg.LinAlgError("design matrix is rank deficient")
    c, low = scipy.linalg.cho_factor(gram)
    return scipy.linalg.cho_solve((c, low), X.T @ Y)


def with_intercept(Z):
    Z = np.asarray(Z, dtype=np.float64)
    return np.hstack([Z, np.ones((Z.shape[0], 1))])
