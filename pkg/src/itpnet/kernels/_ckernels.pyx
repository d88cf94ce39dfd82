# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the fused kernels in ``_pykernels``.

Signatures and return layouts match the NumPy module exactly.
"""

import numpy as np
from libc.math cimport sqrt, fabs

cdef double GELU_C = 0.7978845608028654
cdef double GELU_A = 0.044715


def layer_norm_forward(const double[:, ::1] x, const double[::1] gamma,
                       const double[::1] beta, double eps):
    cdef Py_ssize_t R = x.shape[0], D = x.shape[1], r, j
    y_arr = np.empty((R, D))
    xhat_arr = np.empty((R, D))
    rstd_arr = np.empty(R)
    cdef double[:, ::1] y = y_arr
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] rstd = rstd_arr
    cdef double mu, var, d, rs
    with nogil:
        for r in range(R):
            mu = 0.0
            for j in range(D):
                mu = mu + x[r, j]
            mu = mu / D
            var = 0.0
            for j in range(D):
                d = x[r, j] - mu
                var = var + d * d
            rs = 1.0 / sqrt(var / D + eps)
            rstd[r] = rs
            for j in range(D):
                d = (x[r, j] - mu) * rs
                xhat[r, j] = d
                y[r, j] = d * gamma[j] + beta[j]
    return y_arr, xhat_arr, rstd_arr


def layer_norm_backward(const double[:, ::1] dy, const double[:, ::1] xhat,
                        const double[::1] rstd, const double[::1] gamma):
    cdef Py_ssize_t R = dy.shape[0], D = dy.shape[1], r, j
    dx_arr = np.empty((R, D))
    dgamma_arr = np.zeros(D)
    dbeta_arr = np.zeros(D)
    cdef double[:, ::1] dx = dx_arr
    cdef double[::1] dgamma = dgamma_arr
    cdef double[::1] dbeta = dbeta_arr
    cdef double m1, m2, g
    with nogil:
        for r in range(R):
            m1 = 0.0
            m2 = 0.0
            for j in range(D):
                g = dy[r, j] * gamma[j]
                m1 = m1 + g
                m2 = m2 + g * xhat[r, j]
                dgamma[j] = dgamma[j] + dy[r, j] * xhat[r, j]
                dbeta[j] = dbeta[j] + dy[r, j]
            m1 = m1 / D
            m2 = m2 / D
            for j in range(D):
                dx[r, j] = (dy[r, j] * gamma[j] - m1 - xhat[r, j] * m2) * rstd[r]
    return dx_arr, dgamma_arr, dbeta_arr


# Transcendentals (exp, tanh) go through NumPy's vectorized loops: scalar libm
# calls cost far more per element than the SIMD versions, so only the
# arithmetic around them is fused here.


def softmax_forward(const double[:, ::1] x):
    cdef Py_ssize_t R = x.shape[0], D = x.shape[1], r, j
    y_arr = np.empty((R, D))
    cdef double[:, ::1] y = y_arr
    cdef double m, s
    with nogil:
        for r in range(R):
            m = x[r, 0]
            for j in range(1, D):
                if x[r, j] > m:
                    m = x[r, j]
            for j in range(D):
                y[r, j] = x[r, j] - m
    np.exp(y_arr, out=y_arr)  # vectorized, see the note above
    with nogil:
        for r in range(R):
            s = 0.0
            for j in range(D):
                s = s + y[r, j]
            for j in range(D):
                y[r, j] = y[r, j] / s
    return y_arr


def softmax_backward(const double[:, ::1] y, const double[:, ::1] dy):
    cdef Py_ssize_t R = y.shape[0], D = y.shape[1], r, j
    dx_arr = np.empty((R, D))
    cdef double[:, ::1] dx = dx_arr
    cdef double s
    with nogil:
        for r in range(R):
            s = 0.0
            for j in range(D):
                s = s + dy[r, j] * y[r, j]
            for j in range(D):
                dx[r, j] = y[r, j] * (dy[r, j] - s)
    return dx_arr


def lstm_forward(const double[:, ::1] z, const double[:, ::1] c):
    cdef Py_ssize_t R = c.shape[0], H = c.shape[1], r, j
    arg_arr = np.empty((R, 4 * H))
    cdef double[:, ::1] arg = arg_arr
    with nogil:
        for r in range(R):
            for j in range(3 * H):
                arg[r, j] = 0.5 * z[r, j]
            for j in range(3 * H, 4 * H):
                arg[r, j] = z[r, j]
    gates_arr = np.tanh(arg_arr)
    cn_arr = np.empty((R, H))
    cdef double[:, ::1] gates = gates_arr
    cdef double[:, ::1] cn = cn_arr
    with nogil:
        for r in range(R):
            for j in range(3 * H):
                gates[r, j] = 0.5 * (1.0 + gates[r, j])
            for j in range(H):
                cn[r, j] = gates[r, H + j] * c[r, j] + gates[r, j] * gates[r, 3 * H + j]
    tc_arr = np.tanh(cn_arr)
    h_arr = np.empty((R, H))
    cdef double[:, ::1] tc = tc_arr
    cdef double[:, ::1] h = h_arr
    with nogil:
        for r in range(R):
            for j in range(H):
                h[r, j] = gates[r, 2 * H + j] * tc[r, j]
    return h_arr, cn_arr, gates_arr, tc_arr


def lstm_backward(const double[:, ::1] dh, const double[:, ::1] dc_new,
                  const double[:, ::1] c, const double[:, ::1] gates,
                  const double[:, ::1] tanh_c):
    cdef Py_ssize_t R = c.shape[0], H = c.shape[1], r, j
    dz_arr = np.empty((R, 4 * H))
    dc_arr = np.empty((R, H))
    cdef double[:, ::1] dz = dz_arr
    cdef double[:, ::1] dc = dc_arr
    cdef double i, f, o, g, t, dct
    with nogil:
        for r in range(R):
            for j in range(H):
                i = gates[r, j]
                f = gates[r, H + j]
                o = gates[r, 2 * H + j]
                g = gates[r, 3 * H + j]
                t = tanh_c[r, j]
                dct = dc_new[r, j] + dh[r, j] * o * (1.0 - t * t)
                dz[r, j] = dct * g * i * (1.0 - i)
                dz[r, H + j] = dct * c[r, j] * f * (1.0 - f)
                dz[r, 2 * H + j] = dh[r, j] * t * o * (1.0 - o)
                dz[r, 3 * H + j] = dct * i * (1.0 - g * g)
                dc[r, j] = dct * f
    return dz_arr, dc_arr


def smooth_l1_forward(const double[:, ::1] v):
    cdef Py_ssize_t R = v.shape[0], D = v.shape[1], r, j
    out_arr = np.empty(R)
    s_arr = np.empty(R)
    cdef double[::1] out = out_arr
    cdef double[::1] ss = s_arr
    cdef double s
    with nogil:
        for r in range(R):
            s = 0.0
            for j in range(D):
                s = s + fabs(v[r, j])
            ss[r] = s
            if s < 1.0:
                out[r] = 0.5 * s * s
            else:
                out[r] = s - 0.5
    return out_arr, s_arr


def smooth_l1_backward(const double[::1] dout, const double[:, ::1] v,
                       const double[::1] s):
    cdef Py_ssize_t R = v.shape[0], D = v.shape[1], r, j
    dv_arr = np.empty((R, D))
    cdef double[:, ::1] dv = dv_arr
    cdef double slope, x
    with nogil:
        for r in range(R):
            slope = s[r] if s[r] < 1.0 else 1.0
            slope = slope * dout[r]
            for j in range(D):
                x = v[r, j]
                if x > 0.0:
                    dv[r, j] = slope
                elif x < 0.0:
                    dv[r, j] = -slope
                else:
                    dv[r, j] = 0.0
    return dv_arr


cdef _gelu_inner(const double[::1] x):
    cdef Py_ssize_t n = x.shape[0], k
    u_arr = np.empty(n)
    cdef double[::1] u = u_arr
    cdef double v
    with nogil:
        for k in range(n):
            v = x[k]
            u[k] = GELU_C * (v + GELU_A * v * v * v)
    return np.tanh(u_arr)


def gelu_forward(const double[::1] x):
    cdef Py_ssize_t n = x.shape[0], k
    cdef double[::1] t = _gelu_inner(x)
    y_arr = np.empty(n)
    cdef double[::1] y = y_arr
    with nogil:
        for k in range(n):
            y[k] = 0.5 * x[k] * (1.0 + t[k])
    return y_arr


def gelu_backward(const double[::1] x, const double[::1] dy):
    cdef Py_ssize_t n = x.shape[0], k
    cdef double[::1] t = _gelu_inner(x)
    dx_arr = np.empty(n)
    cdef double[::1] dx = dx_arr
    cdef double v, dt
    with nogil:
        for k in range(n):
            v = x[k]
            dt = GELU_C * (1.0 + 3.0 * GELU_A * v * v) * (1.0 - t[k] * t[k])
            dx[k] = dy[k] * (0.5 * (1.0 + t[k]) + 0.5 * v * dt)
    return dx_arr


def displacement_errors(const double[:, :, :, ::1] pred, const double[:, :, ::1] gt):
    cdef Py_ssize_t S = pred.shape[0], K = pred.shape[1], M = pred.shape[2]
    cdef Py_ssize_t s, k, m
    ade_arr = np.empty((S, K))
    fde_arr = np.empty((S, K))
    cdef double[:, ::1] ade = ade_arr
    cdef double[:, ::1] fde = fde_arr
    cdef double acc, dx, dy, dist
    with nogil:
        for s in range(S):
            for k in range(K):
                acc = 0.0
                dist = 0.0
                for m in range(M):
                    dx = pred[s, k, m, 0] - gt[s, m, 0]
                    dy = pred[s, k, m, 1] - gt[s, m, 1]
                    dist = sqrt(dx * dx + dy * dy)
                    acc = acc + dist
                ade[s, k] = acc / M
                fde[s, k] = dist
    return ade_arr, fde_arr
