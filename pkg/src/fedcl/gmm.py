"""One-dimensional Gaussian mixtures: EM fitting, density, sampling.

Clients summarise their difficulty-score distribution with a small mixture
and upload only ``(weights, means, variances)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ._backend import kernels

VARIANCE_FLOOR = 1e-6


@dataclass(frozen=True)
class GmmParams:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        for name in ("weights", "means", "variances"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64).ravel())
        n = len(self.weights)
        if n < 1 or len(self.means) != n or len(self.variances) != n:
            raise ValueError("mixture needs matching, non-empty weight/mean/variance arrays")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"mixture weights must be a simplex, got {self.weights}")
        if np.any(self.variances < VARIANCE_FLOOR * (1 - 1e-12)):
            raise ValueError("mixture variance below floor")

    @property
    def n_components(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class GmmFit:
    params: GmmParams
    log_likelihood: float  # mean per-sample log-likelihood at the returned params
    history: np.ndarray  # mean log-likelihood after init and after each M-step

    @property
    def n_iter(self) -> int:
        return len(self.history) - 1


def fit_em(scores, n_components=3, seed=0, max_iters=200, tol=1e-7) -> GmmFit:
    """Fit a 1-D mixture by EM.

    Initial means sit at seeded quantiles spread one per stratum
    (``(l + u_l) / L`` with ``u_l ~ U(0, 1)``); weights are uniform and every
    variance starts at the data variance.
    """
    x = np.ascontiguousarray(scores, dtype=np.float64).ravel()
    if len(x) == 0:
        raise ValueError("cannot fit a mixture to no data")
    if not np.isfinite(x).all():
        raise ValueError("scores must be finite")
    L = int(n_components)
    if L < 1:
        raise ValueError("need at least one component")
    if len(x) < L:
        warnings.warn(f"only {len(x)} scores for {L} components; reducing to {len(x)}", stacklevel=2)
        L = len(x)
    if np.ptp(x) == 0.0:
        params = GmmParams(np.ones(1), x[:1].copy(), np.full(1, VARIANCE_FLOOR))
        ll = float(-0.5 * np.log(2 * np.pi * VARIANCE_FLOOR))
        return GmmFit(params, ll, np.array([ll]))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    levels = (np.arange(L) + rng.uniform(size=L)) / L
    means = np.quantile(x, levels)
    variances = np.full(L, max(x.var(), VARIANCE_FLOOR))
    weights = np.full(L, 1.0 / L)
    w, mu, var, hist = kernels.em_fit(x, weights, means, variances, int(max_iters), float(tol), VARIANCE_FLOOR)
    w = w / w.sum()
    return GmmFit(GmmParams(w, mu, var), float(hist[-1]), hist)


def pdf(gmm: GmmParams, x):
    x = np.asarray(x, dtype=np.float64)
    d = x[..., None] - gmm.means
    comp = np.exp(-0.5 * d * d / gmm.variances) / np.sqrt(2 * np.pi * gmm.variances)
    out = comp @ gmm.weights
    return float(out) if out.ndim == 0 else out


def log_likelihood(gmm: GmmParams, x) -> float:
    """Mean per-sample log-likelihood."""
    return float(np.mean(np.log(pdf(gmm, np.asarray(x, dtype=np.float64).ravel()))))


def sample(gmm: GmmParams, count: int, seed=0) -> np.ndarray:
    """Draw ``count`` values: categorical component choice, then a Gaussian draw."""
    if count < 0:
        raise ValueError("count must be non-negative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if count == 0:
        return np.empty(0)
    comp = rng.choice(gmm.n_components, size=count, p=gmm.weights)
    return rng.normal(gmm.means[comp], np.sqrt(gmm.variances[comp]))
