"""Data-free distillation through a conditional latent generator.

The server trains ``G(y, conditioner, noise) -> z`` so that the averaged logits
of all client heads classify ``z`` as ``y`` under the curriculum loss. Clients
then add the same loss, evaluated with their own head on generated latents, to
their local objective.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import nn
from .curriculum import CurriculumConfig, cl_transform
from .nn import GeneratorParams, GradientVec, LossSpec, ModelParams
from .sync import GlobalPool, draw_global_samples


@dataclass(frozen=True)
class LabelPrior:
    counts: np.ndarray
    probabilities: np.ndarray

    @classmethod
    def uniform(cls, num_classes):
        return cls(np.zeros(num_classes, dtype=np.int64), np.full(num_classes, 1.0 / num_classes))


def update_label_prior(counters) -> LabelPrior:
    """Sum per-client label counters and normalise."""
    c = np.asarray(counters, dtype=np.int64)
    if c.ndim == 1:
        c = c[None, :]
    if np.any(c < 0):
        raise ValueError("label counters must be non-negative")
    total = c.sum(axis=0)
    if total.sum() == 0:
        raise ValueError("no labels observed by any client")
    return LabelPrior(total, total / total.sum())


@dataclass(frozen=True)
class DistillBatch:
    labels: np.ndarray
    conditioners: np.ndarray
    noises: np.ndarray
    latents: np.ndarray

    def __post_init__(self):
        n = len(self.labels)
        if not (len(self.conditioners) == len(self.noises) == len(self.latents) == n):
            raise ValueError("distillation batch fields differ in length")

    def __len__(self):
        return len(self.labels)


def normalize_conditioner(values, pool: Optional[GlobalPool]):
    """Min-max scale raw difficulty draws by the pool's range into [0, 1]."""
    values = np.asarray(values, dtype=np.float64)
    if pool is None:
        return values
    span = pool.high - pool.low
    if span <= 0.0:
        return np.full_like(values, 0.5)
    return (values - pool.low) / span


def sample_inputs(gen: GeneratorParams, prior: LabelPrior, pool: Optional[GlobalPool], batch_size, rng):
    """Draw labels from the prior, conditioners from the pool, and Gaussian noise.

    Without a pool (before any client has reported) the conditioner is uniform
    on [0, 1], the normalised range a pool would produce.
    """
    if batch_size < 1:
        raise ValueError("batch size must be at least 1")
    p = np.asarray(prior.probabilities, dtype=np.float64)
    if len(p) != gen.num_classes or not np.isfinite(p).all() or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("degenerate label prior")
    labels = rng.choice(gen.num_classes, size=batch_size, p=p)
    if pool is None:
        cond = rng.uniform(size=batch_size)
    else:
        cond = normalize_conditioner(draw_global_samples(pool, batch_size, rng), pool)
    noise = rng.standard_normal((batch_size, gen.noise_dim))
    return labels, cond, noise


def sample_distill_batch(gen, prior, pool, batch_size, rng) -> DistillBatch:
    labels, cond, noise = sample_inputs(gen, prior, pool, batch_size, rng)
    z = nn.forward_generator(gen, labels, cond, noise)
    return DistillBatch(labels, cond, noise, np.atleast_2d(z))


def _head_layers(head):
    return head.head_layers if isinstance(head, ModelParams) else list(head)


def ensemble_logits(heads: Sequence, z):
    """Arithmetic mean of each head's logits on ``z`` (summed in list order)."""
    if len(heads) == 0:
        raise ValueError("ensemble needs at least one head")
    z = np.asarray(z, dtype=np.float64)
    total = None
    for head in heads:
        layers = _head_layers(head)
        if layers[0][0].shape[1] != z.shape[-1]:
            raise nn.ShapeError("head input dimension does not match latent")
        out = nn.dense_forward(layers, z)[-1]
        total = out if total is None else total + out
    return total / len(heads)


def generator_loss(gen: GeneratorParams, heads, prior, pool, batch_size, cl_cfg: Optional[CurriculumConfig], rng):
    """Mean curriculum loss of the head ensemble on one generated batch.

    Returns ``(loss, GradientVec over the generator)``; heads are constants.
    """
    labels, cond, noise = sample_inputs(gen, prior, pool, batch_size, rng)
    return _generator_loss_on(gen, heads, labels, cond, noise, cl_cfg)


def _generator_loss_on(gen, heads, labels, cond, noise, cl_cfg):
    inp = nn.generator_input(gen.num_classes, labels, cond, noise)
    gacts = nn.dense_forward(gen.layers, inp, final_tanh=True)
    z = gacts[-1]
    head_acts = [nn.dense_forward(_head_layers(h), z) for h in heads]
    total = None
    for acts in head_acts:
        total = acts[-1] if total is None else total + acts[-1]
    mean_logits = total / len(heads)
    ce, probs = nn.softmax_cross_entropy(mean_logits, labels)
    if cl_cfg is None:
        per_sample, dce = ce, np.ones_like(ce)
    else:
        per_sample, dce = cl_transform(cl_cfg)(ce)
    if not np.isfinite(per_sample).all():
        i = int(np.flatnonzero(~np.isfinite(per_sample))[0])
        raise nn.NonFiniteLossError(i, float(per_sample[i]), "generator loss")
    n = len(labels)
    g = probs
    g[np.arange(n), labels] -= 1.0
    g *= (dce / n)[:, None]
    # each head receives grad / K on its logits
    g_head = g / len(heads)
    gz = None
    for h, acts in zip(heads, head_acts):
        _, gin = nn.dense_backward(_head_layers(h), acts, g_head)
        gz = gin if gz is None else gz + gin
    grads, _ = nn.dense_backward(gen.layers, gacts, gz, final_tanh=True)
    loss = float(per_sample.mean())
    return loss, GradientVec(grads, loss)


def train_generator(gen, heads, prior, pool, steps, opt_state, rng, batch_size=128, cl_cfg=None):
    """Run ``steps`` optimizer updates; returns ``(generator, loss trajectory)``."""
    losses = []
    for _ in range(int(steps)):
        loss, grad = generator_loss(gen, heads, prior, pool, batch_size, cl_cfg, rng)
        gen = nn.step(gen, grad, opt_state)
        losses.append(loss)
    return gen, losses


def distillation_term(client_params: ModelParams, batch: DistillBatch, cl_cfg: Optional[CurriculumConfig]):
    """Curriculum loss of the client's own head on generated latents.

    Generated latents enter after the feature extractor, so the feature-layer
    part of the returned gradient is exactly zero.
    """
    if len(batch) == 0:
        raise ValueError("empty distillation batch")
    spec = LossSpec(transform=None if cl_cfg is None else cl_transform(cl_cfg), head_only=True,
                    context="distillation term")
    grad = nn.backward(client_params, batch.latents, batch.labels, spec)
    return grad.loss, grad
