# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of ``lbl._kernels_py``; same names, signatures and results."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, log, M_PI

cnp.import_array()

cdef double LV_MIN = -10.0
cdef double LV_MAX = 10.0
cdef double HALF_LOG_2PI = 0.5 * log(2.0 * M_PI)


cdef inline double _clamp(double v, double* mask) nogil:
    if v < LV_MIN:
        mask[0] = 0.0
        return LV_MIN
    if v > LV_MAX:
        mask[0] = 0.0
        return LV_MAX
    mask[0] = 1.0
    return v


def _flat(a):
    return np.ascontiguousarray(a, dtype=np.float64).reshape(-1)


def diag_nll_grad(mu, logvar, x):
    shape = np.shape(mu)
    cdef const double[::1] m = _flat(mu)
    cdef const double[::1] lv = _flat(logvar)
    cdef const double[::1] xs = _flat(x)
    cdef Py_ssize_t n = m.shape[0], i
    g_mu = np.empty(n)
    g_lv = np.empty(n)
    cdef double[::1] gm = g_mu
    cdef double[::1] gl = g_lv
    cdef double total = 0.0, r, inv
    with nogil:
        for i in range(n):
            inv = exp(-lv[i])
            r = xs[i] - m[i]
            total += HALF_LOG_2PI + 0.5 * lv[i] + 0.5 * r * r * inv
            gm[i] = -r * inv
            gl[i] = 0.5 - 0.5 * r * r * inv
    return total, g_mu.reshape(shape), g_lv.reshape(shape)


def kl_diag_grad(mu1, lv1, mu2, lv2):
    shape = np.shape(mu1)
    reduce_rows = np.ndim(mu2) < np.ndim(mu1)
    cdef const double[::1] a = _flat(mu1)
    cdef const double[::1] la = _flat(lv1)
    cdef const double[::1] b = _flat(np.broadcast_to(mu2, shape))
    cdef const double[::1] lb = _flat(np.broadcast_to(lv2, shape))
    cdef Py_ssize_t n = a.shape[0], i
    g_mu1 = np.empty(n)
    g_lv1 = np.empty(n)
    g_lv2 = np.empty(n)
    cdef double[::1] gm1 = g_mu1
    cdef double[::1] gl1 = g_lv1
    cdef double[::1] gl2 = g_lv2
    cdef double total = 0.0, inv2, dd, e1
    with nogil:
        for i in range(n):
            inv2 = exp(-lb[i])
            dd = a[i] - b[i]
            e1 = exp(la[i])
            total += lb[i] - la[i] + (e1 + dd * dd) * inv2 - 1.0
            gm1[i] = dd * inv2
            gl1[i] = 0.5 * (e1 * inv2 - 1.0)
            gl2[i] = 0.5 * (1.0 - (e1 + dd * dd) * inv2)
    total *= 0.5
    g_mu1 = g_mu1.reshape(shape)
    g_lv1 = g_lv1.reshape(shape)
    g_lv2 = g_lv2.reshape(shape)
    if reduce_rows:
        return total, g_mu1, g_lv1, -g_mu1.sum(axis=0), g_lv2.sum(axis=0)
    return total, g_mu1, g_lv1, -g_mu1, g_lv2


def vjepa_terms(p_mu, p_lv_raw, q_mu, q_lv_raw, eps, double beta):
    shape = np.shape(p_mu)
    cdef const double[::1] pm = _flat(p_mu)
    cdef const double[::1] plr = _flat(p_lv_raw)
    cdef const double[::1] qm = _flat(q_mu)
    cdef const double[::1] qlr = _flat(q_lv_raw)
    cdef const double[::1] e = _flat(eps)
    cdef Py_ssize_t n = pm.shape[0], i
    g_pmu = np.empty(n)
    g_plv = np.empty(n)
    g_qlv = np.empty(n)
    cdef double[::1] gpm = g_pmu
    cdef double[::1] gpl = g_plv
    cdef double[::1] gql = g_qlv
    cdef double nll = 0.0, kl = 0.0
    cdef double plv, qlv, pmask, qmask, s, z, inv, r, eq
    with nogil:
        for i in range(n):
            plv = _clamp(plr[i], &pmask)
            qlv = _clamp(qlr[i], &qmask)
            s = exp(0.5 * qlv)
            z = qm[i] + s * e[i]
            inv = exp(-plv)
            r = z - pm[i]
            nll += HALF_LOG_2PI + 0.5 * plv + 0.5 * r * r * inv
            eq = s * s
            kl += qm[i] * qm[i] + eq - qlv - 1.0
            gpm[i] = -r * inv
            gpl[i] = (0.5 - 0.5 * r * r * inv) * pmask
            gql[i] = (r * inv * e[i] * 0.5 * s + beta * 0.5 * (eq - 1.0)) * qmask
    return nll, 0.5 * kl, g_pmu.reshape(shape), g_plv.reshape(shape), g_qlv.reshape(shape)


def vicreg_reg_grad(z, double var_coeff, double cov_coeff):
    cdef const double[:, ::1] zz = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t n = zz.shape[0], d = zz.shape[1], i, j, k
    mean_a = np.zeros(d)
    std_a = np.empty(d)
    off_a = np.zeros((d, d))
    g_a = np.empty((n, d))
    cdef double[::1] mean = mean_a
    cdef double[::1] std = std_a
    cdef double[:, ::1] off = off_a
    cdef double[:, ::1] g = g_a
    cdef double hinge = 0.0, cov = 0.0, acc, cj, scale_c
    cdef double nm1 = n - 1.0
    with nogil:
        for i in range(n):
            for j in range(d):
                mean[j] += zz[i, j]
        for j in range(d):
            mean[j] /= n
        # covariance (upper triangle, diagonal kept separately in std)
        for i in range(n):
            for j in range(d):
                cj = zz[i, j] - mean[j]
                for k in range(j, d):
                    off[j, k] += cj * (zz[i, k] - mean[k])
        for j in range(d):
            std[j] = sqrt(off[j, j] / nm1 + 1e-4)
            if 1.0 - std[j] > 0.0:
                hinge += 1.0 - std[j]
            off[j, j] = 0.0
            for k in range(j + 1, d):
                off[j, k] /= nm1
                off[k, j] = off[j, k]
                cov += 2.0 * off[j, k] * off[j, k]
        hinge /= d
        cov /= d
        scale_c = cov_coeff * 4.0 / (d * nm1)
        for i in range(n):
            for j in range(d):
                cj = zz[i, j] - mean[j]
                if 1.0 - std[j] > 0.0:
                    acc = cj * (var_coeff * (-1.0 / d) / (std[j] * nm1))
                else:
                    acc = 0.0
                for k in range(d):
                    acc += scale_c * (zz[i, k] - mean[k]) * off[k, j]
                g[i, j] = acc
    return hinge, cov, g_a


def adam_update(param, grad, m, v, double lr, double beta1, double beta2, double eps, long t):
    if not (param.flags.c_contiguous and m.flags.c_contiguous and v.flags.c_contiguous):
        raise ValueError("adam_update needs C-contiguous parameter and moment arrays")
    cdef double[::1] p = param.reshape(-1)
    cdef const double[::1] gr = np.ascontiguousarray(grad, dtype=np.float64).reshape(-1)
    cdef double[::1] mm = m.reshape(-1)
    cdef double[::1] vv = v.reshape(-1)
    cdef Py_ssize_t n = p.shape[0], i
    cdef double bc1 = 1.0 - beta1 ** t
    cdef double bc2 = 1.0 - beta2 ** t
    cdef double g
    with nogil:
        for i in range(n):
            g = gr[i]
            mm[i] = beta1 * mm[i] + (1.0 - beta1) * g
            vv[i] = beta2 * vv[i] + (1.0 - beta2) * (g * g)
            p[i] -= lr * (mm[i] / bc1) / (sqrt(vv[i] / bc2) + eps)


def systematic_resample(weights, double u0):
    cdef const double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t n = w.shape[0], i = 0, k
    out = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t[::1] idx = out
    cdef double cum = w[0], pos
    with nogil:
        for k in range(n):
            pos = (u0 + k) / n
            while cum <= pos and i < n - 1:
                i += 1
                cum += w[i]
            idx[k] = i
    return out
