"""Round-based simulation of FedCL, FedAvg and FedProx.

One server loop drives all three algorithms. FedCL adds the curriculum loss,
mixture uploads, generator training and the freeze/unfreeze schedule; the
baselines skip those pieces and train plain (or proximal) cross-entropy.

Aggregation always averages one parameter vector per client. A client that
trained this round contributes its fresh model, a frozen client its last
report, and a live client that was not selected the current global model.
"""
from __future__ import annotations

import hashlib
import logging
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import data as _data
from . import nn
from .config import RunConfig
from .curriculum import cl_transform, difficulty_score, optimal_confidence, per_sample_losses
from .generator import LabelPrior, sample_distill_batch, distillation_term, train_generator, update_label_prior
from .gmm import GmmParams, fit_em
from .nn import GeneratorParams, LossSpec, ModelParams
from .seeding import stream
from .sync import GlobalPool, SyncState, advance_state, build_global_pool, freeze_decision

log = logging.getLogger(__name__)


class ProtocolViolation(AssertionError):
    pass


@dataclass
class ClientReport:
    client_id: int
    model_params: ModelParams
    gmm: Optional[GmmParams]
    label_counter: np.ndarray
    local_steps_run: int
    mean_local_loss: float


@dataclass
class Broadcast:
    model: ModelParams
    generator: Optional[GeneratorParams]
    prior: LabelPrior
    pool: Optional[GlobalPool]
    state_index: int = 0
    threshold: Optional[float] = None
    round: int = 0


@dataclass
class Experiment:
    """Client shards and the held-out test split for one seed."""

    clients: list
    test: _data.Dataset
    partition: list
    partition_hash: str
    num_classes: int
    input_dim: int


@dataclass
class RoundMetrics:
    round: int
    state_index: int
    algorithm: str
    test_accuracy: float
    mean_client_loss: float
    generator_loss: Optional[float]
    frozen_count: int
    wall_seconds: float
    seed: int


@dataclass
class ServerState:
    model: ModelParams
    generator: Optional[GeneratorParams] = None
    generator_opt: Optional[nn.OptimizerState] = None
    generator_trained: bool = False
    prior: Optional[LabelPrior] = None
    pool: Optional[GlobalPool] = None
    sync: Optional[SyncState] = None
    reports: dict = field(default_factory=dict)
    round: int = 0
    rounds_in_state: int = 0
    completed: bool = False
    events: list = field(default_factory=list)
    freeze_violations: int = 0


@dataclass
class TrainingResult:
    model: ModelParams
    history: list
    events: list
    partition_hash: str
    init_hash: str
    freeze_violations: int = 0
    server: Optional[ServerState] = None

    @property
    def final_accuracy(self) -> float:
        return self.history[-1].test_accuracy if self.history else float("nan")


def params_hash(params) -> str:
    return hashlib.sha256(params.flat().astype("<f8").tobytes()).hexdigest()[:16]


# -- data -------------------------------------------------------------------

def prepare_experiment(cfg: RunConfig) -> Experiment:
    """Build the train/test split and the Dirichlet client partition."""
    if cfg.dataset == "blobs":
        full = _data.make_blobs(cfg.data_classes, cfg.data_per_class, cfg.data_dim, cfg.data_spread,
                                stream(cfg.seed, "blobs"))
        train, test = _data.stratified_split(full, cfg.data_test_fraction, stream(cfg.seed, "split"))
    else:
        if not cfg.data_mnist_dir:
            raise FileNotFoundError("dataset=mnist needs data.mnist_dir")
        train = _data.load_mnist(cfg.data_mnist_dir, "train")
        test = _data.load_mnist(cfg.data_mnist_dir, "test")
        train = _data.random_subset(train, cfg.data_train_size, stream(cfg.seed, "mnist-train"))
        test = _data.random_subset(test, cfg.data_test_size, stream(cfg.seed, "mnist-test"))
    share = int(round(cfg.data_distribute_fraction * len(train)))
    distributed = _data.random_subset(train, share, stream(cfg.seed, "distribute"))
    partition = _data.dirichlet_partition(distributed, cfg.clients_total, cfg.data_dirichlet_alpha,
                                          stream(cfg.seed, "partition"))
    return Experiment(
        clients=[distributed.subset(p) for p in partition],
        test=test,
        partition=partition,
        partition_hash=_data.partition_hash(partition),
        num_classes=train.num_classes,
        input_dim=train.dim,
    )


def init_model(cfg: RunConfig, input_dim, num_classes) -> ModelParams:
    return nn.init_classifier(input_dim, num_classes, hidden=(cfg.model_hidden,), latent_dim=cfg.model_latent,
                              seed=stream(cfg.seed, "init-model"))


def init_generator(cfg: RunConfig, num_classes) -> GeneratorParams:
    return nn.init_generator(num_classes, latent_dim=cfg.model_latent, noise_dim=cfg.generator_noise_dim,
                             hidden=(cfg.generator_hidden,), seed=stream(cfg.seed, "init-generator"))


# -- evaluation -------------------------------------------------------------

def evaluate(model: ModelParams, test: _data.Dataset) -> float:
    """Top-1 accuracy; ties go to the lowest class index (``argmax`` order)."""
    if len(test) == 0:
        raise ValueError("empty test set")
    logits = nn.dense_forward(model.layers, test.features)[-1]
    return float(np.mean(np.argmax(logits, axis=1) == test.labels))


# -- client -----------------------------------------------------------------

def _uses_curriculum(cfg):
    return cfg.algorithm == "fedcl" and cfg.curriculum_enabled


def _uses_generator(cfg):
    return cfg.algorithm == "fedcl" and cfg.generator_enabled


def _fits_mixture(cfg):
    return cfg.algorithm == "fedcl" and (cfg.sync_enabled or cfg.generator_enabled)


def difficulty_scores(params: ModelParams, ds: _data.Dataset, cfg: RunConfig) -> np.ndarray:
    ce = per_sample_losses(params, ds.features, ds.labels)
    cl_cfg = cfg.curriculum
    if cl_cfg is None:
        return ce
    return difficulty_score(ce, optimal_confidence(ce, cl_cfg), cl_cfg)


def client_local_update(broadcast: Broadcast, local: _data.Dataset, cfg: RunConfig, client_id=0,
                        round_index=0, local_steps=None) -> ClientReport:
    """Local SGD on the client objective, then mixture fitting and the report."""
    if len(local) == 0:
        raise ValueError(f"client {client_id} has no data")
    steps = cfg.train_local_steps if local_steps is None else int(local_steps)
    params = broadcast.model.copy()
    opt = nn.sgd(cfg.train_lr)
    cl_cfg = cfg.curriculum if _uses_curriculum(cfg) else None
    prox = cfg.algorithm == "fedprox"
    spec = LossSpec(
        transform=None if cl_cfg is None else cl_transform(cl_cfg),
        prox_mu=cfg.fedprox_mu if prox else 0.0,
        prox_anchor=broadcast.model if prox else None,
    )
    distill = (_uses_generator(cfg) and broadcast.generator is not None
               and cfg.generator_distill_weight > 0)
    rng_batch = stream(cfg.seed, "minibatch", round_index, client_id)
    rng_distill = stream(cfg.seed, "distill", round_index, client_id)
    counter = np.zeros(local.num_classes, dtype=np.int64)
    losses = []
    n = len(local)
    for t in range(steps):
        idx = rng_batch.integers(n, size=cfg.train_batch_size)
        xb, yb = local.features[idx], local.labels[idx]
        counter += np.bincount(yb, minlength=local.num_classes)
        try:
            grad = nn.backward(params, xb, yb, spec)
            if distill:
                batch = sample_distill_batch(broadcast.generator, broadcast.prior, broadcast.pool,
                                             cfg.generator_distill_batch_size, rng_distill)
                _, dgrad = distillation_term(params, batch, cl_cfg)
                if cfg.generator_distill_weight != 1.0:
                    dgrad = dgrad.scaled(cfg.generator_distill_weight)
                grad = grad + dgrad
        except nn.NonFiniteLossError as exc:
            raise nn.NonFiniteLossError(exc.index, exc.value,
                                        f"round {round_index}, client {client_id}, step {t}") from exc
        losses.append(grad.loss)
        params = nn.step(params, grad, opt)
    mixture = None
    if _fits_mixture(cfg):
        scores = difficulty_scores(params, local, cfg)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            mixture = fit_em(scores, cfg.gmm_components, stream(cfg.seed, "gmm", round_index, client_id),
                             cfg.gmm_max_iters, cfg.gmm_tol).params
    return ClientReport(client_id, params, mixture, counter, steps, float(np.mean(losses)) if losses else 0.0)


# -- server -----------------------------------------------------------------

def aggregate(reports_live: Sequence, cached_frozen: Sequence = (), num_clients=None) -> ModelParams:
    """Coordinate-wise mean over every client's parameter vector."""
    members = [r.model_params if isinstance(r, ClientReport) else r for r in reports_live]
    members += [r.model_params if isinstance(r, ClientReport) else r for r in cached_frozen]
    if not members:
        raise ValueError("nothing to aggregate")
    if num_clients is not None and len(members) != num_clients:
        raise ValueError(f"aggregation expects {num_clients} clients, got {len(members)}")
    first = members[0]
    total = [[w.copy(), b.copy()] for w, b in first.layers]
    for m in members[1:]:
        if m.shapes != first.shapes:
            raise nn.ShapeError("client parameter shapes differ")
        for acc, (w, b) in zip(total, m.layers):
            acc[0] += w
            acc[1] += b
    k = len(members)
    return ModelParams([(w / k, b / k) for w, b in total], first.split_index)


def _threads():
    try:
        return max(1, int(os.environ.get("FEDCL_THREADS", "1")))
    except ValueError:
        return 1


def init_server(cfg: RunConfig, exp: Experiment) -> ServerState:
    model = init_model(cfg, exp.input_dim, exp.num_classes)
    server = ServerState(model=model, prior=LabelPrior.uniform(exp.num_classes))
    if _uses_generator(cfg):
        server.generator = init_generator(cfg, exp.num_classes)
        server.generator_opt = nn.adam(cfg.generator_lr)
    if cfg.algorithm == "fedcl" and cfg.sync_enabled:
        server.sync = SyncState(cfg.schedule, cfg.clients_total, cfg.sync_temperature)
    return server


def _event(server, kind, **extra):
    ev = {"event": kind, "round": server.round,
          "z": (server.sync.index + 1) if server.sync else 0,
          "frozen": len(server.sync.frozen) if server.sync else 0,
          "threshold": server.sync.threshold if server.sync else None}
    ev.update(extra)
    server.events.append(ev)
    log.info("sync %s", ev)


def run_round(server: ServerState, cfg: RunConfig, exp: Experiment) -> RoundMetrics:
    """One broadcast / local-update / aggregate / refresh cycle."""
    if server.sync is not None and not server.sync.live:
        raise ProtocolViolation("run_round called with no live clients")
    started = time.perf_counter()
    server.round += 1
    r = server.round
    K = cfg.clients_total
    live = sorted(server.sync.live) if server.sync is not None else list(range(K))
    m = min(len(live), cfg.clients_active)
    chosen = sorted(int(k) for k in stream(cfg.seed, "select", r).choice(live, size=m, replace=False))
    broadcast = Broadcast(
        model=server.model,
        generator=server.generator if server.generator_trained else None,
        prior=server.prior,
        pool=server.pool,
        state_index=server.sync.index if server.sync else 0,
        threshold=server.sync.threshold if server.sync else None,
        round=r,
    )

    def work(k):
        return client_local_update(broadcast, exp.clients[k], cfg, k, r)

    threads = _threads()
    if threads > 1 and len(chosen) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fresh = dict(zip(chosen, pool.map(work, chosen)))
    else:
        fresh = {k: work(k) for k in chosen}
    server.reports.update(fresh)

    frozen = server.sync.frozen if server.sync is not None else frozenset()
    live_members = [fresh[k].model_params if k in fresh else server.model for k in range(K) if k not in frozen]
    frozen_members = [server.reports[k].model_params for k in sorted(frozen)]
    server.model = aggregate(live_members, frozen_members, K)

    gen_loss = None
    if cfg.algorithm == "fedcl":
        reporters = sorted(server.reports)
        counters = [server.reports[k].label_counter for k in reporters]
        if counters and np.sum(counters) > 0:
            server.prior = update_label_prior(counters)
        if server.generator is not None and cfg.generator_steps > 0:
            heads = [server.reports[k].model_params for k in reporters]
            server.generator, losses = train_generator(
                server.generator, heads, server.prior, server.pool, cfg.generator_steps, server.generator_opt,
                stream(cfg.seed, "generator", r), batch_size=cfg.generator_batch_size, cl_cfg=cfg.curriculum)
            server.generator_trained = True
            gen_loss = float(np.mean(losses))
        with_gmm = [k for k in reporters if server.reports[k].gmm is not None]
        if with_gmm:
            server.pool = build_global_pool([server.reports[k].gmm for k in with_gmm], cfg.sync_samples_per_client,
                                            stream(cfg.seed, "pool", r), client_ids=with_gmm)
        if server.sync is not None and server.pool is not None:
            _update_sync(server, cfg)

    acc = evaluate(server.model, exp.test)
    frozen_count = len(server.sync.frozen) if server.sync is not None else 0
    state_index = server.sync.index + 1 if server.sync is not None else 0
    if server.sync is not None:
        _maybe_advance(server, cfg)
    return RoundMetrics(
        round=r,
        state_index=state_index,
        algorithm=cfg.algorithm,
        test_accuracy=acc,
        mean_client_loss=float(np.mean([rep.mean_local_loss for rep in fresh.values()])),
        generator_loss=gen_loss,
        frozen_count=frozen_count,
        wall_seconds=time.perf_counter() - started,
        seed=cfg.seed,
    )


def _update_sync(server: ServerState, cfg: RunConfig):
    sync = server.sync.with_threshold(server.pool)
    before = sync.frozen
    candidates = [k for k in sorted(sync.live) if k in server.pool.client_samples]
    newly = [k for k in candidates
             if freeze_decision(server.pool.client_samples[k], sync.threshold, sync.temperature)]
    sync = sync.freeze(newly)
    if not before <= sync.frozen:
        server.freeze_violations += 1
    server.sync = sync
    server.rounds_in_state += 1
    if newly:
        _event(server, "freeze", clients=newly)


def _maybe_advance(server: ServerState, cfg: RunConfig):
    sync = server.sync
    cap = cfg.sync_max_rounds_per_state
    if sync.live and cap and server.rounds_in_state >= cap:
        warnings.warn(f"training state {sync.index + 1} hit the {cap}-round cap; forcing advance", stacklevel=3)
        _event(server, "forced_advance", live=sorted(sync.live))
        sync = sync.freeze(sync.live)
        server.sync = sync
    if not sync.live:
        server.sync = advance_state(sync, server.pool)
        server.rounds_in_state = 0
        if server.sync.completed:
            server.completed = True
            _event(server, "complete")
        else:
            _event(server, "advance")


def run_training(cfg: RunConfig, exp: Optional[Experiment] = None, keep_server=False) -> TrainingResult:
    """Run rounds until the schedule is exhausted or the round budget is spent."""
    exp = exp or prepare_experiment(cfg)
    server = init_server(cfg, exp)
    init_hash = params_hash(server.model)
    history = []
    while server.round < cfg.train_rounds and not server.completed:
        history.append(run_round(server, cfg, exp))
    return TrainingResult(server.model, history, server.events, exp.partition_hash, init_hash,
                          server.freeze_violations, server if keep_server else None)
