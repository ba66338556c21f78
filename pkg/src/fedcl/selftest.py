"""Fast property checks behind ``fedcl selftest``.

Each check returns ``(name, passed, detail)``. They are small versions of the
test-suite properties, meant to confirm an installed copy works.
"""
from __future__ import annotations

import numpy as np

from . import gmm, nn, sync
from ._backend import compiled_kernels, python_kernels
from .config import RunConfig
from .curriculum import CurriculumConfig, cl_loss, cl_transform, lambertw, optimal_confidence
from .federation import prepare_experiment, run_training


def check_lambertw(rng):
    x = np.concatenate([rng.uniform(-1 / np.e, 0, 200), rng.exponential(20.0, 200)])
    w = lambertw(x)
    resid = np.max(np.abs(w * np.exp(w) - x) / np.maximum(1.0, np.abs(x)))
    return resid < 1e-12, f"max relative residual of W e^W = x is {resid:.1e}"


def check_confidence(rng):
    worst = 0.0
    grid = np.arange(1e-4, np.e, 1e-4)
    for _ in range(50):
        cfg = CurriculumConfig(rng.uniform(0, 5), rng.uniform(0.1, 2))
        loss = rng.uniform(0, 10)
        objective = (loss - cfg.tau) * grid + cfg.lam * np.log(grid) ** 2
        worst = max(worst, abs(grid[np.argmin(objective)] - optimal_confidence(loss, cfg)))
    return worst < 1e-3, f"largest gap to a grid minimiser on (0, e] is {worst:.1e}"


def check_em(rng):
    drops = 0
    for _ in range(20):
        x = np.concatenate([rng.normal(rng.uniform(-5, 5), rng.uniform(0.2, 2), rng.integers(20, 200))
                            for _ in range(rng.integers(1, 4))])
        hist = gmm.fit_em(x, 3, rng).history
        drops += int(np.any(np.diff(hist) < -1e-9))
    return drops == 0, f"{drops} of 20 fits had a log-likelihood decrease"


def check_sync(rng):
    bad = 0
    for _ in range(200):
        pool = np.sort(rng.normal(size=rng.integers(1, 60)))
        level = rng.uniform(0.01, 0.99)
        p = sync.GlobalPool(pool, (len(pool),))
        k = max(1, int(np.ceil(level * len(pool) - 1e-9)))
        bad += sync.threshold_lookup(p, level) != sorted(pool.tolist())[min(k, len(pool)) - 1]
        draws = rng.normal(size=10)
        v = rng.uniform(0.1, 0.9)
        bad += sync.freeze_decision(draws, 0.0, v) != (sum(d <= 0.0 for d in draws) > v * 10)
    return bad == 0, f"{bad} disagreements with brute-force sort/count"


def check_gradient(rng):
    worst = 0.0
    cfg = CurriculumConfig(tau=2.0, lam=0.5)
    for _ in range(5):
        params = nn.init_classifier(4, 3, hidden=(5,), latent_dim=3, seed=rng)
        x, y = rng.normal(size=(6, 4)), rng.integers(3, size=6)
        spec = nn.LossSpec(transform=cl_transform(cfg))
        g = nn.backward(params, x, y, spec).flat()
        flat = params.flat()

        def risk(vec):
            logits = nn.dense_forward(params.with_flat(vec).layers, x)[-1]
            return float(np.mean(cl_loss(nn.softmax_cross_entropy(logits, y)[0], cfg)[0]))

        fd = np.empty_like(flat)
        for i in range(len(flat)):
            e = np.zeros_like(flat)
            e[i] = 1e-5
            fd[i] = (risk(flat + e) - risk(flat - e)) / 2e-5
        worst = max(worst, np.linalg.norm(fd - g) / max(np.linalg.norm(fd), 1e-12))
    return worst < 1e-4, f"worst relative gradient error {worst:.1e}"


def check_backends(rng):
    if compiled_kernels is None:
        return True, "compiled kernels not built; python fallback in use"
    x = np.ascontiguousarray(rng.uniform(-1 / np.e, 50, 500))
    gap = np.max(np.abs(compiled_kernels.lambertw(x) - python_kernels.lambertw(x)))
    return gap < 1e-13, f"compiled vs python Lambert W differ by at most {gap:.1e}"


def check_fedprox_reduction(rng):
    cfg = RunConfig(clients_total=4, clients_active=2, train_rounds=3, train_local_steps=3, data_per_class=30,
                    data_classes=3, algorithm="fedavg", seed=int(rng.integers(1000)))
    exp = prepare_experiment(cfg)
    a = run_training(cfg, exp)
    b = run_training(cfg.replace(algorithm="fedprox", fedprox_mu=0.0), exp)
    same = np.array_equal(a.model.flat(), b.model.flat())
    return same, "FedProx with zero proximal weight " + ("matches" if same else "differs from") + " FedAvg"


CHECKS = (check_lambertw, check_confidence, check_em, check_sync, check_gradient, check_backends,
          check_fedprox_reduction)


def run_checks(seed=0):
    for check in CHECKS:
        rng = np.random.default_rng([seed, CHECKS.index(check)])
        try:
            ok, detail = check(rng)
        except Exception as exc:  # noqa: BLE001 - report, keep going
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        yield check.__name__.removeprefix("check_"), bool(ok), detail
