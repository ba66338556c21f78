"""Dense tanh MLPs with hand-written backprop, SGD and Adam.

Weights are stored ``(out, in)`` and applied to row-major batches, so a layer
computes ``x @ W.T + b``. Hidden layers use tanh. A classifier's final layer is
linear (logits); a generator's final layer is tanh so that generated latents
live in the same range as the classifier's own latent activations.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

Layer = tuple  # (weight[out, in], bias[out])


class ShapeError(ValueError):
    pass


class NonFiniteLossError(FloatingPointError):
    """Raised when a per-sample loss is NaN or infinite."""

    def __init__(self, index, value, context=""):
        self.index = int(index)
        self.value = value
        msg = f"non-finite loss {value!r} at sample {self.index}"
        super().__init__(f"{msg} ({context})" if context else msg)


def _check_layers(layers):
    if not layers:
        raise ShapeError("at least one layer is required")
    for i, (w, b) in enumerate(layers):
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ShapeError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
        if 0 in w.shape:
            raise ShapeError(f"layer {i} has a zero dimension")
        if i and w.shape[1] != layers[i - 1][0].shape[0]:
            raise ShapeError(
                f"layer {i} expects {w.shape[1]} inputs, previous layer gives {layers[i - 1][0].shape[0]}"
            )


class _Dense:
    """Shared container behaviour: flat views, copies, congruence checks."""

    layers: list

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for w, b in self.layers for a in (w, b)])

    def _unflatten(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ShapeError(f"flat vector has shape {vec.shape}, expected ({self.size},)")
        out, pos = [], 0
        for w, b in self.layers:
            nw, nb = w.size, b.size
            out.append((vec[pos:pos + nw].reshape(w.shape).copy(), vec[pos + nw:pos + nw + nb].copy()))
            pos += nw + nb
        return out

    @property
    def size(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)

    @property
    def shapes(self):
        return [(w.shape, b.shape) for w, b in self.layers]

    def is_finite(self) -> bool:
        return all(np.isfinite(w).all() and np.isfinite(b).all() for w, b in self.layers)


class ModelParams(_Dense):
    """Classifier weights split into a feature extractor and a predictor head.

    Layers ``[0, split_index)`` map inputs to the latent ``z``; layers
    ``[split_index, n)`` map ``z`` to logits.
    """

    def __init__(self, layers: Sequence[Layer], split_index: int):
        layers = [(np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64)) for w, b in layers]
        _check_layers(layers)
        if not 0 < split_index < len(layers):
            raise ShapeError(f"split_index {split_index} outside (0, {len(layers)})")
        self.layers = layers
        self.split_index = int(split_index)

    @property
    def feature_layers(self):
        return self.layers[:self.split_index]

    @property
    def head_layers(self):
        return self.layers[self.split_index:]

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def latent_dim(self) -> int:
        return self.layers[self.split_index][0].shape[1]

    @property
    def num_classes(self) -> int:
        return self.layers[-1][0].shape[0]

    def with_flat(self, vec) -> "ModelParams":
        return ModelParams(self._unflatten(vec), self.split_index)

    def copy(self) -> "ModelParams":
        return ModelParams([(w.copy(), b.copy()) for w, b in self.layers], self.split_index)

    def __repr__(self):
        dims = [self.input_dim] + [w.shape[0] for w, _ in self.layers]
        return f"ModelParams(dims={dims}, split_index={self.split_index})"


class GeneratorParams(_Dense):
    """Conditional generator: ``[one_hot(y), conditioner, noise] -> z``."""

    def __init__(self, layers: Sequence[Layer], num_classes: int):
        layers = [(np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64)) for w, b in layers]
        _check_layers(layers)
        self.layers = layers
        self.num_classes = int(num_classes)
        if self.noise_dim < 0:
            raise ShapeError("generator input narrower than one-hot label plus conditioner")

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def noise_dim(self) -> int:
        return self.input_dim - self.num_classes - 1

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    def with_flat(self, vec) -> "GeneratorParams":
        return GeneratorParams(self._unflatten(vec), self.num_classes)

    def copy(self) -> "GeneratorParams":
        return GeneratorParams([(w.copy(), b.copy()) for w, b in self.layers], self.num_classes)


@dataclass
class GradientVec(_Dense):
    """Per-layer gradients congruent with their owner, plus the loss value."""

    layers: list
    loss: float = 0.0

    def with_flat(self, vec) -> "GradientVec":
        return GradientVec(self._unflatten(vec), self.loss)

    def __add__(self, other: "GradientVec") -> "GradientVec":
        if self.shapes != other.shapes:
            raise ShapeError("gradient shapes differ")
        return GradientVec(
            [(w1 + w2, b1 + b2) for (w1, b1), (w2, b2) in zip(self.layers, other.layers)],
            self.loss + other.loss,
        )

    def scaled(self, c: float) -> "GradientVec":
        return GradientVec([(c * w, c * b) for w, b in self.layers], c * self.loss)


def zero_gradient(owner) -> GradientVec:
    return GradientVec([(np.zeros_like(w), np.zeros_like(b)) for w, b in owner.layers], 0.0)


# -- dense algebra ----------------------------------------------------------

def dense_forward(layers, x, final_tanh=False):
    """Return the list of activations ``[x, a_1, ..., a_n]``."""
    acts = [x]
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        h = acts[-1] @ w.T + b
        acts.append(np.tanh(h) if (i < last or final_tanh) else h)
    return acts


def dense_backward(layers, acts, grad_out, final_tanh=False):
    """Backprop ``grad_out`` (w.r.t. the last activation) through ``layers``.

    Returns ``(layer_grads, grad_input)``.
    """
    grads = [None] * len(layers)
    g = grad_out
    last = len(layers) - 1
    for i in range(last, -1, -1):
        w, _ = layers[i]
        if i < last or final_tanh:
            g = g * (1.0 - acts[i + 1] ** 2)
        grads[i] = (g.T @ acts[i], g.sum(axis=0))
        g = g @ w
    return grads, g


def softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Per-sample cross-entropy and the softmax probabilities (fused, stable)."""
    logits = np.atleast_2d(logits)
    labels = np.asarray(labels, dtype=np.intp)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e.sum(axis=1, keepdims=True)
    ce = np.log(s[:, 0]) - shifted[np.arange(len(labels)), labels]
    return ce, e / s


def _as_batch(x, width, what):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != width:
        raise ShapeError(f"{what} has shape {x.shape}, expected trailing dimension {width}")
    return x2, single


def forward_classifier(params: ModelParams, x):
    """Return ``(z, logits, probs)`` for one sample or a batch."""
    xb, single = _as_batch(x, params.input_dim, "input")
    acts = dense_forward(params.layers, xb)
    z, logits = acts[params.split_index], acts[-1]
    probs = softmax(logits)
    if single:
        return z[0], logits[0], probs[0]
    return z, logits, probs


def forward_head(params: ModelParams, z):
    zb, single = _as_batch(z, params.latent_dim, "latent")
    logits = dense_forward(params.head_layers, zb)[-1]
    probs = softmax(logits)
    return (logits[0], probs[0]) if single else (logits, probs)


def generator_input(num_classes, labels, conditioners, noise):
    labels = np.asarray(labels, dtype=np.intp)
    n = len(labels)
    one_hot = np.zeros((n, num_classes))
    one_hot[np.arange(n), labels] = 1.0
    return np.hstack([one_hot, np.asarray(conditioners, dtype=np.float64).reshape(n, 1),
                      np.asarray(noise, dtype=np.float64).reshape(n, -1)])


def forward_generator(gen: GeneratorParams, y, beta_cond, epsilon):
    """Generate latents for a label (or array of labels)."""
    single = np.ndim(y) == 0
    labels = np.atleast_1d(np.asarray(y))
    if np.any(labels < 0) or np.any(labels >= gen.num_classes):
        raise ValueError(f"label out of range [0, {gen.num_classes})")
    eps = np.asarray(epsilon, dtype=np.float64).reshape(len(labels), -1)
    if eps.shape[1] != gen.noise_dim:
        raise ShapeError(f"noise has width {eps.shape[1]}, expected {gen.noise_dim}")
    if not np.isfinite(eps).all():
        raise ValueError("noise must be finite")
    inp = generator_input(gen.num_classes, labels, np.broadcast_to(beta_cond, labels.shape), eps)
    z = dense_forward(gen.layers, inp, final_tanh=True)[-1]
    return z[0] if single else z


# -- losses -----------------------------------------------------------------

# Maps per-sample cross-entropy to (per-sample loss, d loss / d ce).
Transform = Callable[[np.ndarray], tuple]


@dataclass
class LossSpec:
    """Which composite loss ``backward`` differentiates.

    ``transform`` reshapes per-sample cross-entropy (the curriculum loss plugs
    in here); ``prox_mu``/``prox_anchor`` add ``mu/2 * ||w - anchor||^2``;
    ``head_only`` treats the batch inputs as latents fed to the head.
    """

    transform: Optional[Transform] = None
    prox_mu: float = 0.0
    prox_anchor: Optional[ModelParams] = None
    head_only: bool = False
    context: str = field(default="", compare=False)


def backward(params: ModelParams, x, y, spec: LossSpec = LossSpec()) -> GradientVec:
    """Gradient of the batch-mean loss w.r.t. every parameter of ``params``."""
    y = np.asarray(y, dtype=np.intp)
    if len(y) == 0:
        raise ValueError("empty batch")
    if spec.head_only:
        layers = params.head_layers
        xb, _ = _as_batch(x, params.latent_dim, "latent")
    else:
        layers = params.layers
        xb, _ = _as_batch(x, params.input_dim, "input")
    acts = dense_forward(layers, xb)
    ce, probs = softmax_cross_entropy(acts[-1], y)
    if spec.transform is None:
        per_sample, dce = ce, None
    else:
        per_sample, dce = spec.transform(ce)
    bad = ~np.isfinite(per_sample)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NonFiniteLossError(i, float(per_sample[i]), spec.context)
    n = len(y)
    g = probs
    g[np.arange(n), y] -= 1.0
    if dce is None:
        g /= n
    else:
        g *= (dce / n)[:, None]
    grads, _ = dense_backward(layers, acts, g)
    if spec.head_only:
        grads = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params.feature_layers] + grads
    loss = float(per_sample.mean())
    if spec.prox_anchor is not None:
        prox = 0.0
        out = []
        for (gw, gb), (w, b), (aw, ab) in zip(grads, params.layers, spec.prox_anchor.layers):
            dw, db = w - aw, b - ab
            prox += float(np.sum(dw * dw) + np.sum(db * db))
            out.append((gw + spec.prox_mu * dw, gb + spec.prox_mu * db))
        grads = out
        loss += 0.5 * spec.prox_mu * prox
    return GradientVec(grads, loss)


# -- optimizers -------------------------------------------------------------

@dataclass
class OptimizerState:
    kind: str = "sgd"
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: Optional[list] = None
    v: Optional[list] = None
    t: int = 0

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")


def sgd(lr) -> OptimizerState:
    return OptimizerState("sgd", lr)


def adam(lr) -> OptimizerState:
    return OptimizerState("adam", lr)


def step(params, grad: GradientVec, state: OptimizerState):
    """Apply one optimizer update; returns new params (``state`` is updated in place)."""
    if params.shapes != grad.shapes:
        raise ShapeError("gradient does not match parameter shapes")
    if state.kind == "sgd":
        new = [(w - state.lr * gw, b - state.lr * gb)
               for (w, b), (gw, gb) in zip(params.layers, grad.layers)]
    else:
        if state.m is None:
            state.m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params.layers]
            state.v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params.layers]
        state.t += 1
        c1 = 1.0 - state.beta1 ** state.t
        c2 = 1.0 - state.beta2 ** state.t
        new, ms, vs = [], [], []
        for p_pair, g_pair, m_pair, v_pair in zip(params.layers, grad.layers, state.m, state.v):
            layer, mm, vv = [], [], []
            for p, g, m, v in zip(p_pair, g_pair, m_pair, v_pair):
                m = state.beta1 * m + (1.0 - state.beta1) * g
                v = state.beta2 * v + (1.0 - state.beta2) * g * g
                layer.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
                mm.append(m)
                vv.append(v)
            new.append(tuple(layer))
            ms.append(tuple(mm))
            vs.append(tuple(vv))
        state.m, state.v = ms, vs
    if isinstance(params, ModelParams):
        return ModelParams(new, params.split_index)
    return GeneratorParams(new, params.num_classes)


# -- initialization ---------------------------------------------------------

def _glorot_layers(dims, rng):
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        if fan_in <= 0 or fan_out <= 0:
            raise ShapeError(f"zero-dimension layer in {dims}")
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append((rng.uniform(-limit, limit, size=(fan_out, fan_in)), np.zeros(fan_out)))
    return layers


def init_classifier(input_dim, num_classes, hidden=(64,), latent_dim=32, seed=0) -> ModelParams:
    """Glorot-uniform classifier ``input -> hidden... -> latent -> classes``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    dims = [input_dim, *hidden, latent_dim, num_classes]
    return ModelParams(_glorot_layers(dims, rng), split_index=len(dims) - 2)


def init_generator(num_classes, latent_dim=32, noise_dim=32, hidden=(128,), seed=0) -> GeneratorParams:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    dims = [num_classes + 1 + noise_dim, *hidden, latent_dim]
    return GeneratorParams(_glorot_layers(dims, rng), num_classes)
