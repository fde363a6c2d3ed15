# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled chain loops for the built-in analytic targets.

The funnel and isotropic-Gaussian log densities (with their directional
derivatives and gradients) are evaluated in C, and each sampler's per-step
proposal arithmetic runs in a tight loop. Random variates come from the same
purpose streams as the pure-Python loop, drawn in blocks; stream order per
step is identical, so both backends see the same randomness.

Target ids and algorithm indices must stay in sync with fmala.targets and
fmala.samplers.ALGORITHMS.
"""

from libc.math cimport exp, log, sqrt, fabs, isfinite, INFINITY, M_PI

import numpy as np

DEF BLOCK = 1024

# fmala.samplers.ALGORITHMS order
cdef enum:
    ALG_MALA = 0
    ALG_FMALA = 1
    ALG_LINE_FMALA = 2
    ALG_PC_FMALA = 3
    ALG_PC_LINE_FMALA = 4

# fmala.targets kernel ids
cdef enum:
    TARGET_FUNNEL = 1
    TARGET_GAUSSIAN = 2

cdef double LOG_2PI = log(2.0 * M_PI)


# ---------------------------------------------------------------------------
# Analytic target evaluations
# ---------------------------------------------------------------------------


cdef inline int _f2(int target_id, double p0, double f_const, double* x, double* v,
                    Py_ssize_t dim, double* f, double* jvp, double* vhv) noexcept nogil:
    cdef Py_ssize_t i, d
    cdef double sq = 0.0, sv = 0.0, vv = 0.0, w, vw, ew, inv
    if target_id == TARGET_FUNNEL:
        d = dim - 1
        for i in range(d):
            sq += x[i] * x[i]
            sv += x[i] * v[i]
            vv += v[i] * v[i]
        w = x[d]
        vw = v[d]
        ew = exp(w)
        f[0] = 0.5 * d * w - 0.5 * ew * sq - w * w / 18.0 + f_const
        jvp[0] = -ew * sv + (0.5 * d - 0.5 * ew * sq - w / 9.0) * vw
        vhv[0] = -ew * vv - 2.0 * ew * vw * sv + (-0.5 * ew * sq - 1.0 / 9.0) * vw * vw
        return 0
    if target_id == TARGET_GAUSSIAN:
        inv = 1.0 / (p0 * p0)
        for i in range(dim):
            sq += x[i] * x[i]
            sv += x[i] * v[i]
            vv += v[i] * v[i]
        f[0] = -0.5 * sq * inv + f_const
        jvp[0] = -sv * inv
        vhv[0] = -vv * inv
        return 0
    return -1


cdef inline int _f_grad(int target_id, double p0, double f_const, double* x,
                        Py_ssize_t dim, double* f, double* g) noexcept nogil:
    cdef Py_ssize_t i, d
    cdef double sq = 0.0, w, ew, inv
    if target_id == TARGET_FUNNEL:
        d = dim - 1
        for i in range(d):
            sq += x[i] * x[i]
        w = x[d]
        ew = exp(w)
        f[0] = 0.5 * d * w - 0.5 * ew * sq - w * w / 18.0 + f_const
        for i in range(d):
            g[i] = -ew * x[i]
        g[d] = 0.5 * d - 0.5 * ew * sq - w / 9.0
        return 0
    if target_id == TARGET_GAUSSIAN:
        inv = 1.0 / (p0 * p0)
        for i in range(dim):
            sq += x[i] * x[i]
            g[i] = -x[i] * inv
        f[0] = -0.5 * sq * inv + f_const
        return 0
    return -1


cdef inline double _f_const(int target_id, double p0, Py_ssize_t dim):
    if target_id == TARGET_FUNNEL:
        return -0.5 * (dim - 1) * LOG_2PI - 0.5 * log(18.0 * M_PI)
    return -0.5 * dim * (LOG_2PI + 2.0 * log(p0))


cdef inline double _sqdist(double* a, double* b, Py_ssize_t dim) noexcept nogil:
    cdef Py_ssize_t i
    cdef double acc = 0.0, diff
    for i in range(dim):
        diff = a[i] - b[i]
        acc += diff * diff
    return acc


cdef inline double _dot(double* a, double* b, Py_ssize_t dim) noexcept nogil:
    cdef Py_ssize_t i
    cdef double acc = 0.0
    for i in range(dim):
        acc += a[i] * b[i]
    return acc


cdef inline double _normalize(double* raw, double* out, Py_ssize_t dim) noexcept nogil:
    # Returns the pre-normalization norm; caller redraws degenerate vectors.
    cdef Py_ssize_t i
    cdef double acc = 0.0, norm
    for i in range(dim):
        acc += raw[i] * raw[i]
    norm = sqrt(acc)
    if norm >= 1e-30:
        for i in range(dim):
            out[i] = raw[i] / norm
    return norm


# ---------------------------------------------------------------------------
# Python-visible single evaluations (used by the twin-agreement tests)
# ---------------------------------------------------------------------------


def eval_kernel_f2(int target_id, double[::1] tparams, double[::1] x, double[::1] v):
    """Compiled (f, jvp, vhv) for one point and tangent."""
    cdef double f = 0.0, jvp = 0.0, vhv = 0.0
    cdef double p0 = tparams[0] if tparams.shape[0] > 0 else 0.0
    cdef double c = _f_const(target_id, p0, x.shape[0])
    if _f2(target_id, p0, c, &x[0], &v[0], x.shape[0], &f, &jvp, &vhv) != 0:
        raise ValueError(f"unknown target id {target_id}")
    return f, jvp, vhv


def eval_kernel_grad(int target_id, double[::1] tparams, double[::1] x):
    """Compiled (f, gradient) for one point."""
    cdef double f = 0.0
    cdef double p0 = tparams[0] if tparams.shape[0] > 0 else 0.0
    cdef double c = _f_const(target_id, p0, x.shape[0])
    grad = np.empty(x.shape[0])
    cdef double[::1] g = grad
    if _f_grad(target_id, p0, c, &x[0], x.shape[0], &f, &g[0]) != 0:
        raise ValueError(f"unknown target id {target_id}")
    return f, grad


# ---------------------------------------------------------------------------
# Chain loop
# ---------------------------------------------------------------------------


def run_chain_loop(
    int algorithm,
    int target_id,
    double[::1] tparams,
    double[::1] theta0,
    double logp0,
    double eta,
    double floor_eps,
    bint corrected,
    object tangent_rng,
    object noise_rng,
    object accept_rng,
    double[:, ::1] out_theta,
    double[::1] out_logp,
    double[::1] out_gamma,
    unsigned char[::1] out_accept,
    unsigned char[::1] out_floored,
    double[:, ::1] out_scalars,
):
    """Advance one chain for ``out_theta.shape[0]`` steps entirely in C.

    Consumes the tangent/noise/accept streams in the same per-step order as
    the pure-Python loop (draws batched per block).
    """
    cdef Py_ssize_t n = out_theta.shape[0]
    cdef Py_ssize_t dim = theta0.shape[0]
    cdef double p0 = tparams[0] if tparams.shape[0] > 0 else 0.0
    cdef double f_const = _f_const(target_id, p0, dim)

    cdef bint line = algorithm == ALG_LINE_FMALA or algorithm == ALG_PC_LINE_FMALA
    cdef bint forward = algorithm != ALG_MALA

    # Step-size scalings (bias-corrected defaults).
    cdef double var = eta * eta
    cdef double eta_scaled = eta * sqrt(<double> dim) if corrected else eta
    cdef double drift = 0.5 * eta_scaled * eta_scaled      # fmala drift coefficient
    cdef double eta_line = eta_scaled                      # line-fmala step
    cdef double var_line = eta_line * eta_line
    cdef double noise_dim = <double> dim if corrected else 1.0  # pc-fmala noise shrink

    scratch = np.empty((6, dim))
    cdef double[:, ::1] s = scratch
    cdef double* th = &s[0, 0]
    cdef double* prop = &s[1, 0]
    cdef double* v_t = &s[2, 0]
    cdef double* v_s = &s[3, 0]
    cdef double* mean_fwd = &s[4, 0]
    cdef double* mean_rev = &s[5, 0]
    cdef double* g_t = &s[2, 0]   # mala reuses the tangent slots
    cdef double* g_s = &s[3, 0]

    cdef Py_ssize_t i, k, start, m, t
    cdef double f_cache = logp0
    cdef double f_t = 0.0, f_s = 0.0, j_t = 0.0, j_s = 0.0, c_t = 0.0, c_s = 0.0
    cdef double h_t, h_s, var_fwd, var_rev, coeff
    cdef double alpha_t, alpha_s, m_fwd_a, m_rev_a, shift
    cdef double gamma = 0.0
    cdef double u, norm
    cdef bint acc, fl
    cdef Py_ssize_t err_step = -1
    cdef int redraws

    cdef double[:, :, ::1] tang3 = None
    cdef double[:, ::1] tang2 = None
    cdef double[:, ::1] noise2 = None
    cdef double[::1] noise1 = None
    cdef double[::1] unis = None
    cdef double[::1] fresh_view = None

    for i in range(dim):
        th[i] = theta0[i]

    start = 0
    while start < n and err_step < 0:
        m = n - start
        if m > BLOCK:
            m = BLOCK
        # Block draws: same per-stream order as per-step draws in Python.
        if forward:
            if line:
                tang2 = tangent_rng.normal_block((m, dim))
            else:
                tang3 = tangent_rng.normal_block((m, 2, dim))
        if line:
            noise1 = noise_rng.normal_block((m,))
        else:
            noise2 = noise_rng.normal_block((m, dim))
        unis = accept_rng.uniform_block(m)

        for k in range(m):
            t = start + k
            fl = False

            # --- forward tangent -------------------------------------------
            if forward:
                if line:
                    norm = _normalize(&tang2[k, 0], v_t, dim)
                else:
                    norm = _normalize(&tang3[k, 0, 0], v_t, dim)
                redraws = 0
                while norm < 1e-30:
                    redraws += 1
                    if redraws > 100:
                        err_step = t
                        break
                    fresh_view = tangent_rng.normal_block((dim,))
                    norm = _normalize(&fresh_view[0], v_t, dim)
                if err_step >= 0:
                    break

            # --- propose / accept -------------------------------------------
            if algorithm == ALG_MALA:
                if _f_grad(target_id, p0, f_const, th, dim, &f_t, g_t) != 0:
                    err_step = t
                    break
                for i in range(dim):
                    mean_fwd[i] = th[i] + 0.5 * var * g_t[i]
                    prop[i] = mean_fwd[i] + eta * noise2[k, i]
                if _f_grad(target_id, p0, f_const, prop, dim, &f_s, g_s) != 0:
                    err_step = t
                    break
                for i in range(dim):
                    mean_rev[i] = prop[i] + 0.5 * var * g_s[i]
                gamma = (f_s - f_t
                         - 0.5 * _sqdist(th, mean_rev, dim) / var
                         + 0.5 * _sqdist(prop, mean_fwd, dim) / var)

            elif algorithm == ALG_FMALA:
                _f2(target_id, p0, f_const, th, v_t, dim, &f_t, &j_t, &c_t)
                coeff = drift * j_t
                for i in range(dim):
                    mean_fwd[i] = th[i] + coeff * v_t[i]
                    prop[i] = mean_fwd[i] + eta * noise2[k, i]
                norm = _normalize(&tang3[k, 1, 0], v_s, dim)
                while norm < 1e-30:
                    fresh_view = tangent_rng.normal_block((dim,))
                    norm = _normalize(&fresh_view[0], v_s, dim)
                _f2(target_id, p0, f_const, prop, v_s, dim, &f_s, &j_s, &c_s)
                coeff = drift * j_s
                for i in range(dim):
                    mean_rev[i] = prop[i] + coeff * v_s[i]
                gamma = (f_s - f_t
                         - 0.5 * _sqdist(th, mean_rev, dim) / var
                         + 0.5 * _sqdist(prop, mean_fwd, dim) / var)
                out_scalars[t, 0] = j_t
                out_scalars[t, 1] = j_s

            elif algorithm == ALG_LINE_FMALA:
                _f2(target_id, p0, f_const, th, v_t, dim, &f_t, &j_t, &c_t)
                alpha_t = _dot(th, v_t, dim)
                m_fwd_a = alpha_t + 0.5 * var_line * j_t
                alpha_s = m_fwd_a + eta_line * noise1[k]
                shift = alpha_s - alpha_t
                for i in range(dim):
                    prop[i] = th[i] + shift * v_t[i]
                _f2(target_id, p0, f_const, prop, v_t, dim, &f_s, &j_s, &c_s)
                m_rev_a = alpha_s + 0.5 * var_line * j_s
                gamma = (f_s - f_t
                         - 0.5 * (alpha_t - m_rev_a) * (alpha_t - m_rev_a) / var_line
                         + 0.5 * (alpha_s - m_fwd_a) * (alpha_s - m_fwd_a) / var_line)
                out_scalars[t, 0] = j_t
                out_scalars[t, 1] = j_s

            elif algorithm == ALG_PC_FMALA:
                _f2(target_id, p0, f_const, th, v_t, dim, &f_t, &j_t, &c_t)
                h_t = fabs(c_t)
                if h_t < floor_eps:
                    fl = True
                    h_t = floor_eps
                var_fwd = var / (noise_dim * h_t)
                coeff = 0.5 * var / h_t * j_t
                for i in range(dim):
                    mean_fwd[i] = th[i] + coeff * v_t[i]
                    prop[i] = mean_fwd[i] + sqrt(var_fwd) * noise2[k, i]
                norm = _normalize(&tang3[k, 1, 0], v_s, dim)
                while norm < 1e-30:
                    fresh_view = tangent_rng.normal_block((dim,))
                    norm = _normalize(&fresh_view[0], v_s, dim)
                _f2(target_id, p0, f_const, prop, v_s, dim, &f_s, &j_s, &c_s)
                h_s = fabs(c_s)
                if h_s < floor_eps:
                    fl = True
                    h_s = floor_eps
                var_rev = var / (noise_dim * h_s)
                coeff = 0.5 * var / h_s * j_s
                for i in range(dim):
                    mean_rev[i] = prop[i] + coeff * v_s[i]
                gamma = (f_s - f_t
                         - 0.5 * dim * log(2.0 * M_PI * var_rev)
                         - 0.5 * _sqdist(th, mean_rev, dim) / var_rev
                         + 0.5 * dim * log(2.0 * M_PI * var_fwd)
                         + 0.5 * _sqdist(prop, mean_fwd, dim) / var_fwd)
                out_scalars[t, 0] = j_t
                out_scalars[t, 1] = j_s
                out_scalars[t, 2] = c_t
                out_scalars[t, 3] = c_s

            else:  # ALG_PC_LINE_FMALA
                _f2(target_id, p0, f_const, th, v_t, dim, &f_t, &j_t, &c_t)
                h_t = fabs(c_t)
                if h_t < floor_eps:
                    fl = True
                    h_t = floor_eps
                var_fwd = var / h_t
                alpha_t = _dot(th, v_t, dim)
                m_fwd_a = alpha_t + 0.5 * var / h_t * j_t
                alpha_s = m_fwd_a + sqrt(var_fwd) * noise1[k]
                shift = alpha_s - alpha_t
                for i in range(dim):
                    prop[i] = th[i] + shift * v_t[i]
                _f2(target_id, p0, f_const, prop, v_t, dim, &f_s, &j_s, &c_s)
                h_s = fabs(c_s)
                if h_s < floor_eps:
                    fl = True
                    h_s = floor_eps
                var_rev = var / h_s
                m_rev_a = alpha_s + 0.5 * var / h_s * j_s
                gamma = (f_s - f_t
                         - 0.5 * log(2.0 * M_PI * var_rev)
                         - 0.5 * (alpha_t - m_rev_a) * (alpha_t - m_rev_a) / var_rev
                         + 0.5 * log(2.0 * M_PI * var_fwd)
                         + 0.5 * (alpha_s - m_fwd_a) * (alpha_s - m_fwd_a) / var_fwd)
                out_scalars[t, 0] = j_t
                out_scalars[t, 1] = j_s
                out_scalars[t, 2] = c_t
                out_scalars[t, 3] = c_s

            if not isfinite(f_s) or (not isfinite(gamma) and gamma != -INFINITY):
                err_step = t
                break
            if gamma > 0.0:
                gamma = 0.0

            u = unis[k]
            acc = log(u) < gamma
            if acc:
                for i in range(dim):
                    th[i] = prop[i]
                f_cache = f_s

            for i in range(dim):
                out_theta[t, i] = th[i]
            out_logp[t] = f_cache
            out_gamma[t] = gamma
            out_accept[t] = 1 if acc else 0
            out_floored[t] = 1 if fl else 0

        start += m

    if err_step >= 0:
        raise RuntimeError(
            f"compiled chain aborted at step {err_step}: non-finite evaluation "
            f"or degenerate tangent"
        )
