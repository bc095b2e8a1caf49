"""Pure-numpy reference kernels.

Every function here has a twin of the same name and signature in the compiled
``_ckernels`` extension. The two must agree to ~1e-12; ``tests/test_kernels.py``
runs both against each other.
"""
import numpy as np

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0
HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


def clamp_logvar(raw):
    """Clamp raw log-variances, returning the clamped values and the pass-through mask."""
    raw = np.asarray(raw, dtype=np.float64)
    mask = (raw >= LOGVAR_MIN) & (raw <= LOGVAR_MAX)
    return np.clip(raw, LOGVAR_MIN, LOGVAR_MAX), mask.astype(np.float64)


def diag_nll_grad(mu, logvar, x):
    """Summed diagonal-Gaussian NLL and its gradients w.r.t. ``mu`` and ``logvar``."""
    inv = np.exp(-logvar)
    r = x - mu
    total = float(np.sum(HALF_LOG_2PI + 0.5 * logvar + 0.5 * r * r * inv))
    g_mu = -r * inv
    g_lv = 0.5 - 0.5 * r * r * inv
    return total, g_mu, g_lv


def kl_diag_grad(mu1, lv1, mu2, lv2):
    """Summed KL(N(mu1, e^lv1) || N(mu2, e^lv2)) over rows and dimensions.

    ``mu2``/``lv2`` may be a single row broadcast against ``mu1``; their gradients
    come back reduced to that row shape.
    """
    mu2_in = mu2
    mu2 = np.broadcast_to(mu2, mu1.shape)
    lv2 = np.broadcast_to(lv2, mu1.shape)
    inv2 = np.exp(-lv2)
    d = mu1 - mu2
    e1 = np.exp(lv1)
    total = float(0.5 * np.sum(lv2 - lv1 + (e1 + d * d) * inv2 - 1.0))
    g_mu1 = d * inv2
    g_lv1 = 0.5 * (e1 * inv2 - 1.0)
    g_lv2 = 0.5 * (1.0 - (e1 + d * d) * inv2)
    if np.ndim(mu2_in) < np.ndim(mu1):
        return total, g_mu1, g_lv1, -g_mu1.sum(axis=0), g_lv2.sum(axis=0)
    return total, g_mu1, g_lv1, -g_mu1, g_lv2


def vjepa_terms(p_mu, p_lv_raw, q_mu, q_lv_raw, eps, beta):
    """Fused elementwise part of the variational latent-prediction loss.

    Draws ``z = q_mu + exp(q_lv / 2) * eps``, scores it under the predictor
    Gaussian, and adds ``beta * KL(q || N(0, I))``. The gradient reaches the
    target log-variance through the reparameterized sample and the KL term; the
    target mean is treated as a constant.

    Returns ``(nll_sum, kl_sum, g_p_mu, g_p_lv_raw, g_q_lv_raw)``.
    """
    p_lv, p_mask = clamp_logvar(p_lv_raw)
    q_lv, q_mask = clamp_logvar(q_lv_raw)
    s = np.exp(0.5 * q_lv)
    z = q_mu + s * eps
    inv = np.exp(-p_lv)
    r = z - p_mu
    nll = float(np.sum(HALF_LOG_2PI + 0.5 * p_lv + 0.5 * r * r * inv))
    e_q = s * s
    kl = float(0.5 * np.sum(q_mu * q_mu + e_q - q_lv - 1.0))
    g_p_mu = -r * inv
    g_p_lv = (0.5 - 0.5 * r * r * inv) * p_mask
    g_q_lv = (r * inv * eps * 0.5 * s + beta * 0.5 * (e_q - 1.0)) * q_mask
    return nll, kl, g_p_mu, g_p_lv, g_q_lv


def vicreg_reg_grad(z, var_coeff, cov_coeff):
    """Variance hinge and off-diagonal covariance penalty on a batch of embeddings.

    Returns the unweighted ``(hinge, cov)`` values and the gradient of
    ``var_coeff * hinge + cov_coeff * cov`` with respect to ``z``.
    """
    n, d = z.shape
    zc = z - z.mean(axis=0)
    var = np.sum(zc * zc, axis=0) / (n - 1)
    std = np.sqrt(var + 1e-4)
    active = (1.0 - std) > 0.0
    hinge = float(np.mean(np.where(active, 1.0 - std, 0.0)))
    cov_m = zc.T @ zc / (n - 1)
    off = cov_m - np.diag(np.diag(cov_m))
    cov = float(np.sum(off * off) / d)
    g_std = np.where(active, -1.0 / d, 0.0)
    g = zc * (var_coeff * g_std / (std * (n - 1)))
    g += (cov_coeff * 4.0 / (d * (n - 1))) * (zc @ off)
    return hinge, cov, g


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, t):
    """In-place bias-corrected Adam update of ``param`` at step ``t`` (1-based)."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    param -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def systematic_resample(weights, u0):
    """Systematic resampling indices for offset ``u0`` in [0, 1)."""
    n = weights.shape[0]
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    pos = (u0 + np.arange(n)) / n
    return np.minimum(np.searchsorted(cum, pos, side="right"), n - 1).astype(np.intp)
