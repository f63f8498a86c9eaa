# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled row-wise kernels: masked/plain softmax and layer norm.

Same contracts as ``_pykernels`` (the reference implementation); inner
loops are fused per row to avoid numpy temporaries, and the masked softmax
skips excluded entries entirely (the big win under sliding-window masks).
float32 and float64 are both supported; accumulations run in double.

GELU deliberately stays in the numpy backend: its cost is one
transcendental per element with no fusion opportunity, and numpy's
vectorized tanh beats a scalar libm loop.
"""

from libc.math cimport exp, sqrt

import numpy as np

from prefixprop.errors import DegenerateRowError

ctypedef fused real:
    float
    double


def _softmax_fwd(real[:, ::1] x, real[:, ::1] out):
    cdef Py_ssize_t r = x.shape[0], c = x.shape[1], i, j
    cdef double mx, s, e
    for i in range(r):
        mx = x[i, 0]
        for j in range(1, c):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(c):
            e = exp(<double> x[i, j] - mx)
            out[i, j] = <real> e
            s += e
        for j in range(c):
            out[i, j] = <real> (out[i, j] / s)


def _softmax_masked_fwd(real[:, ::1] x, unsigned char[:, ::1] mask, real[:, ::1] out):
    cdef Py_ssize_t r = x.shape[0], c = x.shape[1], i, j
    cdef double mx, s, e
    cdef bint any_allowed
    for i in range(r):
        any_allowed = False
        mx = 0.0
        for j in range(c):
            if mask[i, j]:
                if not any_allowed or x[i, j] > mx:
                    mx = x[i, j]
                any_allowed = True
        if not any_allowed:
            return i
        s = 0.0
        for j in range(c):
            if mask[i, j]:
                e = exp(<double> x[i, j] - mx)
                out[i, j] = <real> e
                s += e
            else:
                out[i, j] = 0.0
        for j in range(c):
            out[i, j] = <real> (out[i, j] / s)
    return -1


def _softmax_bwd(real[:, ::1] probs, real[:, ::1] grad_out, real[:, ::1] out):
    cdef Py_ssize_t r = probs.shape[0], c = probs.shape[1], i, j
    cdef double dot
    for i in range(r):
        dot = 0.0
        for j in range(c):
            dot += <double> probs[i, j] * <double> grad_out[i, j]
        for j in range(c):
            out[i, j] = <real> (probs[i, j] * (grad_out[i, j] - dot))


def _layer_norm_fwd(real[:, ::1] x, real[::1] gamma, real[::1] beta, double eps,
                    real[:, ::1] y, real[::1] mean, real[::1] rstd):
    cdef Py_ssize_t r = x.shape[0], d = x.shape[1], i, j
    cdef double mu, var, rs, diff
    for i in range(r):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            diff = x[i, j] - mu
            var += diff * diff
        var /= d
        rs = 1.0 / sqrt(var + eps)
        mean[i] = <real> mu
        rstd[i] = <real> rs
        for j in range(d):
            y[i, j] = <real> ((x[i, j] - mu) * rs * gamma[j] + beta[j])


def _layer_norm_bwd(real[:, ::1] x, real[::1] gamma, real[::1] mean, real[::1] rstd,
                    real[:, ::1] grad_y, real[:, ::1] dx,
                    double[::1] dgamma, double[::1] dbeta):
    cdef Py_ssize_t r = x.shape[0], d = x.shape[1], i, j
    cdef double c1, c2, rs, mu, xhat, dxhat
    for i in range(r):
        mu = mean[i]
        rs = rstd[i]
        c1 = 0.0
        c2 = 0.0
        for j in range(d):
            xhat = (x[i, j] - mu) * rs
            dxhat = <double> grad_y[i, j] * <double> gamma[j]
            c1 += dxhat
            c2 += dxhat * xhat
        c1 /= d
        c2 /= d
        for j in range(d):
            xhat = (x[i, j] - mu) * rs
            dxhat = <double> grad_y[i, j] * <double> gamma[j]
            dx[i, j] = <real> (rs * (dxhat - c1 - xhat * c2))
            dgamma[j] += <double> grad_y[i, j] * xhat
            dbeta[j] += <double> grad_y[i, j]


# ---------------------------------------------------------------------------
# python-facing wrappers (allocation + contiguity)
# ---------------------------------------------------------------------------


def softmax_forward(scores, mask=None):
    x = np.ascontiguousarray(scores)
    out = np.empty_like(x)
    if mask is None:
        _softmax_fwd(x, out)
    else:
        m = np.ascontiguousarray(mask, dtype=np.uint8)
        bad = _softmax_masked_fwd(x, m, out)
        if bad >= 0:
            raise DegenerateRowError(f"softmax row {bad} has no unmasked entries")
    return out


def softmax_backward(probs, grad_out):
    p = np.ascontiguousarray(probs)
    g = np.ascontiguousarray(grad_out, dtype=p.dtype)
    out = np.empty_like(p)
    _softmax_bwd(p, g, out)
    return out


def layer_norm_forward(x, gamma, beta, eps):
    xc = np.ascontiguousarray(x)
    g = np.ascontiguousarray(gamma, dtype=xc.dtype)
    b = np.ascontiguousarray(beta, dtype=xc.dtype)
    y = np.empty_like(xc)
    mean = np.empty(xc.shape[0], dtype=xc.dtype)
    rstd = np.empty(xc.shape[0], dtype=xc.dtype)
    _layer_norm_fwd(xc, g, b, eps, y, mean, rstd)
    return y, mean, rstd


def layer_norm_backward(x, gamma, mean, rstd, grad_y):
    xc = np.ascontiguousarray(x)
    g = np.ascontiguousarray(gamma, dtype=xc.dtype)
    mu = np.ascontiguousarray(mean, dtype=xc.dtype)
    rs = np.ascontiguousarray(rstd, dtype=xc.dtype)
    gy = np.ascontiguousarray(grad_y, dtype=xc.dtype)
    dx = np.empty_like(xc)
    dgamma = np.zeros(xc.shape[1], dtype=np.float64)
    dbeta = np.zeros(xc.shape[1], dtype=np.float64)
    _layer_norm_bwd(xc, g, mu, rs, gy, dx, dgamma, dbeta)
    return dx, np.asarray(dgamma, dtype=xc.dtype), np.asarray(dbeta, dtype=xc.dtype)
