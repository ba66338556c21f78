"""Pure-numpy fallbacks for the compiled kernels in ``_ckernels.pyx``."""
import numpy as np

_E = np.e
_LOG_2PI = np.log(2.0 * np.pi)


def _w_start(x):
    w = np.empty_like(x)
    near = x < -0.25
    mid = (~near) & (x < _E)
    far = x >= _E
    # e*x + 1 can round just below zero at the branch point
    p = np.sqrt(np.maximum(2.0 * (_E * x[near] + 1.0), 0.0))
    w[near] = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    w[mid] = np.log1p(x[mid])
    lx = np.log(x[far])
    w[far] = lx - np.log(lx)
    return w


def lambertw(x, tol=1e-12, max_iter=100):
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = _w_start(x)
    w[x == 0.0] = 0.0
    active = x != 0.0
    for _ in range(max_iter):
        if not active.any():
            break
        wa = w[active]
        xa = x[active]
        ew = np.exp(wa)
        f = wa * ew - xa
        wp1 = wa + 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            dw = f / (ew * wp1 - (wa + 2.0) * f / (2.0 * wp1))
        dw = np.where(wp1 == 0.0, 0.0, dw)
        w[active] = wa - dw
        done = (np.abs(dw) < tol) | (wp1 == 0.0)
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return w


def _estep(x, w, mu, var):
    d = x[:, None] - mu[None, :]
    logp = np.log(w)[None, :] - 0.5 * (_LOG_2PI + np.log(var)[None, :] + d * d / var[None, :])
    m = logp.max(axis=1, keepdims=True)
    r = np.exp(logp - m)
    s = r.sum(axis=1, keepdims=True)
    r /= s
    return r, float(np.mean(m[:, 0] + np.log(s[:, 0])))


def _mstep(x, resp, mu, var, floor):
    n = x.shape[0]
    nk = resp.sum(axis=0)
    empty = nk <= 0.0
    safe = np.where(empty, 1.0, nk)
    new_mu = np.where(empty, mu, (resp * x[:, None]).sum(axis=0) / safe)
    d = x[:, None] - new_mu[None, :]
    new_var = np.where(empty, var, (resp * d * d).sum(axis=0) / safe)
    new_var = np.maximum(new_var, floor)
    w = np.where(empty, 1e-300, nk / n)
    return w / w.sum(), new_mu, new_var


def em_fit(x, weights, means, variances, max_iters, tol, floor):
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.array(weights, dtype=np.float64)
    mu = np.array(means, dtype=np.float64)
    var = np.array(variances, dtype=np.float64)
    resp, prev = _estep(x, w, mu, var)
    hist = [prev]
    for _ in range(max_iters):
        w, mu, var = _mstep(x, resp, mu, var, floor)
        resp, ll = _estep(x, w, mu, var)
        hist.append(ll)
        if ll - prev < tol:
            break
        prev = ll
    return w, mu, var, np.array(hist)
