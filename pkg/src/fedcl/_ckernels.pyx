# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: Lambert-W (principal branch) and 1-D Gaussian-mixture EM.

Mirrors :mod:`fedcl._pykernels` function for function; results agree to
floating-point reassociation.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, fabs, fmax, INFINITY

cnp.import_array()

cdef double _INV_E = 0.36787944117144233
cdef double _E = 2.718281828459045
cdef double _LOG_2PI = 1.8378770664093453


cdef double _w_start(double x) noexcept nogil:
    cdef double p
    if x < -0.25:
        # e*x + 1 can round just below zero at the branch point
        p = sqrt(fmax(2.0 * (_E * x + 1.0), 0.0))
        return -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    if x < _E:
        return log(1.0 + x)
    p = log(x)
    return p - log(p)


cdef double _lambertw_one(double x, double tol, int max_iter) noexcept nogil:
    cdef double w, ew, f, wp1, dw
    cdef int i
    if x == 0.0:
        return 0.0
    w = _w_start(x)
    for i in range(max_iter):
        ew = exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        if wp1 == 0.0:
            break
        dw = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w -= dw
        if fabs(dw) < tol:
            break
    return w


def lambertw(double[::1] x, double tol=1e-12, int max_iter=100):
    cdef Py_ssize_t i, n = x.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _lambertw_one(x[i], tol, max_iter)
    return out


cdef double _estep(const double[::1] x, double[::1] w, double[::1] mu,
                   double[::1] var, double[:, ::1] resp) noexcept nogil:
    """Fill responsibilities in place; return mean log-likelihood."""
    cdef Py_ssize_t i, l, n = x.shape[0], L = mu.shape[0]
    cdef double m, s, d, total = 0.0
    for i in range(n):
        m = -INFINITY
        for l in range(L):
            d = x[i] - mu[l]
            resp[i, l] = log(w[l]) - 0.5 * (_LOG_2PI + log(var[l]) + d * d / var[l])
            if resp[i, l] > m:
                m = resp[i, l]
        s = 0.0
        for l in range(L):
            resp[i, l] = exp(resp[i, l] - m)
            s += resp[i, l]
        for l in range(L):
            resp[i, l] /= s
        total += m + log(s)
    return total / n


cdef void _mstep(const double[::1] x, double[::1] w, double[::1] mu,
                 double[::1] var, double[:, ::1] resp, double floor) noexcept nogil:
    cdef Py_ssize_t i, l, n = x.shape[0], L = mu.shape[0]
    cdef double nk, acc, d, wsum = 0.0
    for l in range(L):
        nk = 0.0
        acc = 0.0
        for i in range(n):
            nk += resp[i, l]
            acc += resp[i, l] * x[i]
        if nk <= 0.0:
            # empty component: keep mean/variance, weight collapses to ~0
            w[l] = 1e-300
            wsum += w[l]
            continue
        mu[l] = acc / nk
        acc = 0.0
        for i in range(n):
            d = x[i] - mu[l]
            acc += resp[i, l] * d * d
        var[l] = acc / nk
        if var[l] < floor:
            var[l] = floor
        w[l] = nk / n
        wsum += w[l]
    for l in range(L):
        w[l] /= wsum


def em_fit(double[::1] x, double[::1] weights, double[::1] means,
           double[::1] variances, int max_iters, double tol, double floor):
    """Run EM in place on copies of the initial parameters.

    Returns ``(weights, means, variances, history)`` where ``history`` holds
    the mean log-likelihood before the first M-step and after every one.
    """
    cdef Py_ssize_t n = x.shape[0], L = means.shape[0]
    w_arr = np.array(weights, dtype=np.float64, copy=True)
    mu_arr = np.array(means, dtype=np.float64, copy=True)
    var_arr = np.array(variances, dtype=np.float64, copy=True)
    resp_arr = np.empty((n, L), dtype=np.float64)
    hist_arr = np.empty(max_iters + 1, dtype=np.float64)
    cdef double[::1] w = w_arr, mu = mu_arr, var = var_arr, hist = hist_arr
    cdef double[:, ::1] resp = resp_arr
    cdef double ll, prev
    cdef int it, count = 1
    with nogil:
        prev = _estep(x, w, mu, var, resp)
        hist[0] = prev
        for it in range(max_iters):
            _mstep(x, w, mu, var, resp, floor)
            ll = _estep(x, w, mu, var, resp)
            hist[count] = ll
            count += 1
            if ll - prev < tol:
                break
            prev = ll
    return w_arr, mu_arr, var_arr, hist_arr[:count].copy()
