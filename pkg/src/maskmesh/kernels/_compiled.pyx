# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel core: fused masked-affine layers (BLAS-backed), RMSprop and GAE.

Semantics match maskmesh.kernels._fallback; tests/test_kernels.py checks the
two backends agree to rounding noise on randomized inputs.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt, tanh
from scipy.linalg.cython_blas cimport dgemm


cdef void _gemm(char ta, char tb, int m, int n, int k,
                double* a, int lda, double* b, int ldb,
                double* c, int ldc) noexcept nogil:
    cdef double one = 1.0
    cdef double zero = 0.0
    dgemm(&ta, &tb, &m, &n, &k, &one, a, &lda, b, &ldb, &zero, c, &ldc)


def masked_weight(w, s):
    cdef double[:, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[:, ::1] sv = np.ascontiguousarray(s, dtype=np.float64)
    out = np.empty((wv.shape[0], wv.shape[1]), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(wv.shape[0]):
            for j in range(wv.shape[1]):
                ov[i, j] = wv[i, j] if sv[i, j] > 0.0 else 0.0
    return out


cdef _affine(x, w_eff, b, bint apply_tanh):
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] wv = np.ascontiguousarray(w_eff, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef int batch = xv.shape[0]
    cdef int fan_in = xv.shape[1]
    cdef int fan_out = wv.shape[0]
    y = np.empty((batch, fan_out), dtype=np.float64)
    cdef double[:, ::1] yv = y
    cdef Py_ssize_t i, j
    with nogil:
        # row-major Y = X @ W^T seen column-major: Y_cm(out,B) = W_cm^T @ X_cm
        _gemm(b'T', b'N', fan_out, batch, fan_in,
              &wv[0, 0], fan_in, &xv[0, 0], fan_in, &yv[0, 0], fan_out)
        for i in range(batch):
            for j in range(fan_out):
                yv[i, j] += bv[j]
                if apply_tanh:
                    yv[i, j] = tanh(yv[i, j])
    return y


def affine_fwd(x, w_eff, b):
    return _affine(x, w_eff, b, False)


def affine_tanh_fwd(x, w_eff, b):
    return _affine(x, w_eff, b, True)


def affine_bwd(x, w_eff, d_y, tanh_out=None):
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] wv = np.ascontiguousarray(w_eff, dtype=np.float64)
    cdef double[:, ::1] dyv = np.ascontiguousarray(d_y, dtype=np.float64)
    cdef int batch = xv.shape[0]
    cdef int fan_in = xv.shape[1]
    cdef int fan_out = wv.shape[0]
    cdef bint has_tanh = tanh_out is not None
    cdef double[:, ::1] tv
    cdef double t
    d_y_eff = np.empty((batch, fan_out), dtype=np.float64)
    cdef double[:, ::1] dyev = d_y_eff
    d_x = np.empty((batch, fan_in), dtype=np.float64)
    d_w = np.empty((fan_out, fan_in), dtype=np.float64)
    d_b = np.zeros(fan_out, dtype=np.float64)
    cdef double[:, ::1] dxv = d_x
    cdef double[:, ::1] dwv = d_w
    cdef double[::1] dbv = d_b
    cdef Py_ssize_t i, j
    if has_tanh:
        tv = np.ascontiguousarray(tanh_out, dtype=np.float64)
        with nogil:
            for i in range(batch):
                for j in range(fan_out):
                    t = tv[i, j]
                    dyev[i, j] = dyv[i, j] * (1.0 - t * t)
    else:
        with nogil:
            for i in range(batch):
                for j in range(fan_out):
                    dyev[i, j] = dyv[i, j]
    with nogil:
        # dX = dY @ W: dX_cm(in,B) = W_cm(in,out) @ dY_cm(out,B)
        _gemm(b'N', b'N', fan_in, batch, fan_out,
              &wv[0, 0], fan_in, &dyev[0, 0], fan_out, &dxv[0, 0], fan_in)
        # dW = dY^T @ X: dW_cm(in,out) = X_cm(in,B) @ dY_cm(out,B)^T
        _gemm(b'N', b'T', fan_in, fan_out, batch,
              &xv[0, 0], fan_in, &dyev[0, 0], fan_out, &dwv[0, 0], fan_in)
        for i in range(batch):
            for j in range(fan_out):
                dbv[j] += dyev[i, j]
    return d_x, d_w, d_b


def rmsprop_step(param, grad, sq_avg, double lr, double alpha, double eps):
    cdef double[::1] p = param.reshape(-1)
    cdef double[::1] g = np.ascontiguousarray(grad, dtype=np.float64).reshape(-1)
    cdef double[::1] s = sq_avg.reshape(-1)
    cdef Py_ssize_t i
    with nogil:
        for i in range(p.shape[0]):
            s[i] = alpha * s[i] + (1.0 - alpha) * g[i] * g[i]
            p[i] -= lr * g[i] / (sqrt(s[i]) + eps)


def gae(rewards, values, dones, bootstrap, double gamma, double tau):
    cdef double[:, ::1] r = np.ascontiguousarray(rewards, dtype=np.float64)
    cdef double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef double[:, ::1] d = np.ascontiguousarray(dones, dtype=np.float64)
    cdef double[::1] boot = np.ascontiguousarray(bootstrap, dtype=np.float64)
    cdef Py_ssize_t t_len = r.shape[0]
    cdef Py_ssize_t n = r.shape[1]
    adv = np.empty((t_len, n), dtype=np.float64)
    ret = np.empty((t_len, n), dtype=np.float64)
    cdef double[:, ::1] av = adv
    cdef double[:, ::1] rv = ret
    cdef Py_ssize_t t, i
    cdef double not_done, delta, running, next_value
    with nogil:
        for i in range(n):
            running = 0.0
            next_value = boot[i]
            for t in range(t_len - 1, -1, -1):
                not_done = 1.0 - d[t, i]
                delta = r[t, i] + gamma * not_done * next_value - v[t, i]
                running = delta + gamma * tau * not_done * running
                av[t, i] = running
                rv[t, i] = running + v[t, i]
                next_value = v[t, i]
    return adv, ret
