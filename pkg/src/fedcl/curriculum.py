"""Confidence-aware curriculum loss.

Each sample's cross-entropy ``l`` is re-weighted by a confidence ``sigma``:

    score(l, sigma)   = (l - tau) * sigma
    cl_loss(l, sigma) = score + lam * log(sigma)**2

``sigma`` is not learned. It is set per sample to the stationary point of
``cl_loss`` in ``sigma``. Writing ``u = log(sigma)`` the condition
``(l - tau) e^u + 2 lam u = 0`` gives ``sigma* = exp(-W((l - tau) / (2 lam)))``
with ``W`` the principal Lambert-W branch. The argument is clamped at
``-1/e + 1e-12`` so very easy samples saturate at ``sigma* = e``.

For ``l >= tau`` this is the global minimiser over ``sigma > 0``. For
``l < tau`` the objective is unbounded below as ``sigma -> inf``; ``sigma*`` is
then the minimiser over the bounded confidence range ``(0, e]``, which is the
only range the closed form ever returns.

Note the two unrelated sigmas in this package: the confidence here, and the
mixture variances in :mod:`fedcl.gmm`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .nn import ModelParams, LossSpec, dense_forward, softmax_cross_entropy

BRANCH_POINT = -1.0 / np.e
ARG_FLOOR = BRANCH_POINT + 1e-12
MAX_CONFIDENCE = np.e


@dataclass(frozen=True)
class CurriculumConfig:
    tau: float = 10.0
    lam: float = 0.5

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("curriculum lambda must be positive")
        if not np.isfinite(self.tau):
            raise ValueError("curriculum tau must be finite")


@dataclass(frozen=True)
class SampleDifficulty:
    base_loss: float
    confidence: float
    difficulty_score: float
    cl_loss: float


def lambertw(x, tol=1e-12):
    """Principal-branch Lambert W via Halley iteration (``x >= -1/e``)."""
    arr = np.asarray(x, dtype=np.float64)
    if np.any(arr < BRANCH_POINT):
        raise ValueError("lambertw argument below -1/e")
    out = kernels.lambertw(np.ascontiguousarray(arr.ravel()), tol)
    return out.reshape(arr.shape) if arr.ndim else float(out[0])


def optimal_confidence(base_loss, cfg: CurriculumConfig):
    arr = np.asarray(base_loss, dtype=np.float64)
    arg = np.maximum((arr - cfg.tau) / (2.0 * cfg.lam), ARG_FLOOR)
    sigma = np.exp(-lambertw(arg))
    return float(sigma) if np.ndim(sigma) == 0 else sigma


def difficulty_score(base_loss, confidence, cfg: CurriculumConfig):
    return (np.asarray(base_loss) - cfg.tau) * confidence


def cl_loss(base_loss, cfg: CurriculumConfig):
    """Return ``(curriculum loss, optimal confidence)``."""
    sigma = optimal_confidence(base_loss, cfg)
    log_s = np.log(sigma)
    value = difficulty_score(base_loss, sigma, cfg) + cfg.lam * log_s * log_s
    if np.ndim(value) == 0:
        return float(value), float(sigma)
    return value, sigma


def sample_difficulty(base_loss: float, cfg: CurriculumConfig) -> SampleDifficulty:
    value, sigma = cl_loss(base_loss, cfg)
    return SampleDifficulty(float(base_loss), sigma, float(difficulty_score(base_loss, sigma, cfg)), value)


def cl_transform(cfg: CurriculumConfig):
    """Loss transform for :class:`fedcl.nn.LossSpec`.

    The derivative w.r.t. the base loss is ``sigma*``: the confidence sits at a
    stationary point, so its own dependence on the loss drops out.
    """

    def transform(ce):
        value, sigma = cl_loss(ce, cfg)
        return np.atleast_1d(value), np.atleast_1d(sigma)

    return transform


def curriculum_loss_spec(cfg: CurriculumConfig | None, **kwargs) -> LossSpec:
    return LossSpec(transform=None if cfg is None else cl_transform(cfg), **kwargs)


def per_sample_losses(params: ModelParams, x, y):
    logits = dense_forward(params.layers, np.asarray(x, dtype=np.float64))[-1]
    return softmax_cross_entropy(logits, y)[0]


def empirical_cl_risk(params: ModelParams, x, y, cfg: CurriculumConfig):
    """Mean curriculum loss over a dataset, and each sample's difficulty score."""
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("empty dataset")
    ce = per_sample_losses(params, x, y)
    value, sigma = cl_loss(ce, cfg)
    return float(np.mean(value)), difficulty_score(ce, sigma, cfg)
