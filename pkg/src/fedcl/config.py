"""Run configuration: defaults, ``key = value`` files, and flag overrides.

File format (one setting per line, ``#`` starts a comment)::

    algorithm = fedcl
    curriculum.tau = 10
    sync.schedule = 0.3, 0.6, 0.9

Keys are dotted; each maps to the :class:`RunConfig` attribute with dots
replaced by underscores. Resolution order is defaults, then file, then flags.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Optional

from .curriculum import CurriculumConfig

ALGORITHMS = ("fedcl", "fedavg", "fedprox")
DATASETS = ("blobs", "mnist")


class ConfigError(ValueError):
    def __init__(self, message, key=None, line=None):
        where = []
        if key is not None:
            where.append(f"key {key!r}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.key = key
        self.line = line


@dataclass(frozen=True)
class RunConfig:
    algorithm: str = "fedcl"
    seed: int = 0
    dataset: str = "blobs"

    data_classes: int = 10
    data_per_class: int = 400
    data_dim: int = 8
    data_spread: float = 1.5
    data_test_fraction: float = 0.25
    data_distribute_fraction: float = 0.5
    data_dirichlet_alpha: float = 0.1
    data_mnist_dir: str = ""
    data_train_size: int = 6000
    data_test_size: int = 1000

    clients_total: int = 20
    clients_active: int = 10

    train_rounds: int = 200
    train_local_steps: int = 20
    train_batch_size: int = 32
    train_lr: float = 0.01

    model_hidden: int = 64
    model_latent: int = 32

    curriculum_enabled: bool = True
    curriculum_tau: float = 10.0
    curriculum_lambda: float = 0.5

    gmm_components: int = 3
    gmm_max_iters: int = 200
    gmm_tol: float = 1e-7

    sync_enabled: bool = True
    sync_schedule: tuple = (0.3, 0.6, 0.9)
    sync_order: str = "listed"
    sync_strict_order: bool = False
    sync_temperature: float = 0.8
    sync_samples_per_client: int = 200
    sync_max_rounds_per_state: int = 0

    generator_enabled: bool = True
    generator_lr: float = 1e-4
    generator_batch_size: int = 128
    generator_steps: int = 20
    generator_noise_dim: int = 32
    generator_hidden: int = 128
    generator_distill_batch_size: int = 32
    generator_distill_weight: float = 1.0
    generator_diversity_weight: float = 0.0

    fedprox_mu: float = 0.1

    @property
    def active_ratio(self) -> float:
        return self.clients_active / self.clients_total

    @property
    def curriculum(self) -> Optional[CurriculumConfig]:
        if not self.curriculum_enabled:
            return None
        return CurriculumConfig(self.curriculum_tau, self.curriculum_lambda)

    @property
    def schedule(self) -> tuple:
        """Training-state levels in traversal order."""
        if self.sync_order == "decreasing":
            return tuple(sorted(self.sync_schedule, reverse=True))
        return tuple(self.sync_schedule)

    def replace(self, **changes) -> "RunConfig":
        return validate(dataclasses.replace(self, **changes))

    def with_settings(self, settings: dict) -> "RunConfig":
        """Apply ``{dotted.key: value}`` overrides (values may be strings)."""
        return validate(_apply(self, settings.items()))


def key_of(attr: str) -> str:
    return attr.replace("_", ".", 1) if attr not in _TOP_LEVEL else attr


_TOP_LEVEL = {"algorithm", "seed", "dataset"}
_FIELDS = {f.name: f for f in fields(RunConfig)}
KEYS = {key_of(name): name for name in _FIELDS}


def _coerce(key, raw, line=None):
    attr = KEYS[key]
    default = _FIELDS[attr].default
    kind = type(default)
    if not isinstance(raw, str):
        raw_s = None
    else:
        raw_s = raw.strip()
    try:
        if kind is bool:
            if raw_s is None:
                if isinstance(raw, bool):
                    return raw
                raise TypeError
            if raw_s.lower() in ("true", "yes", "1", "on"):
                return True
            if raw_s.lower() in ("false", "no", "0", "off"):
                return False
            raise ValueError
        if kind is tuple:
            if raw_s is None:
                return tuple(float(v) for v in raw)
            return tuple(float(v) for v in raw_s.strip("[]").split(",") if v.strip())
        if kind is int:
            if raw_s is None:
                if isinstance(raw, bool) or int(raw) != raw:
                    raise TypeError
                return int(raw)
            return int(raw_s)
        if kind is float:
            return float(raw_s if raw_s is not None else raw)
        return raw_s if raw_s is not None else str(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"cannot read {raw!r} as {kind.__name__}", key, line) from None


def _apply(cfg, items: Iterable, lines=None):
    changes = {}
    for i, (key, raw) in enumerate(items):
        line = lines[i] if lines else None
        if key not in KEYS:
            raise ConfigError("unknown setting", key, line)
        changes[KEYS[key]] = _coerce(key, raw, line)
    return dataclasses.replace(cfg, **changes)


def validate(cfg: RunConfig) -> RunConfig:
    def bad(msg, attr):
        raise ConfigError(msg, key_of(attr))

    if cfg.algorithm not in ALGORITHMS:
        bad(f"algorithm must be one of {ALGORITHMS}", "algorithm")
    if cfg.dataset not in DATASETS:
        bad(f"dataset must be one of {DATASETS}", "dataset")
    if cfg.seed < 0:
        bad("seed must be non-negative", "seed")
    if cfg.clients_total < 1:
        bad("need at least one client", "clients_total")
    if not 1 <= cfg.clients_active <= cfg.clients_total:
        bad("active clients must be between 1 and the total", "clients_active")
    if cfg.train_rounds < 0:
        bad("round budget must be non-negative", "train_rounds")
    if cfg.train_local_steps < 1:
        bad("local steps must be at least 1", "train_local_steps")
    if cfg.train_batch_size < 1:
        bad("batch size must be at least 1", "train_batch_size")
    for attr in ("train_lr", "generator_lr", "curriculum_lambda", "data_dirichlet_alpha"):
        if not getattr(cfg, attr) > 0:
            bad("must be positive", attr)
    if cfg.fedprox_mu < 0:
        bad("proximal coefficient must be non-negative", "fedprox_mu")
    if not 0 < cfg.data_distribute_fraction <= 1:
        bad("must lie in (0, 1]", "data_distribute_fraction")
    if not 0 < cfg.data_test_fraction < 1:
        bad("must lie in (0, 1)", "data_test_fraction")
    if cfg.gmm_components < 1:
        bad("need at least one mixture component", "gmm_components")
    if not cfg.sync_schedule:
        bad("schedule must not be empty", "sync_schedule")
    if any(not 0 < t < 1 for t in cfg.sync_schedule):
        bad("schedule levels must lie in (0, 1)", "sync_schedule")
    if cfg.sync_order not in ("listed", "decreasing"):
        bad("order must be 'listed' or 'decreasing'", "sync_order")
    if cfg.sync_strict_order and len(cfg.sync_schedule) > 1:
        diffs = [b - a for a, b in zip(cfg.sync_schedule, cfg.sync_schedule[1:])]
        if not (all(d > 0 for d in diffs) or all(d < 0 for d in diffs)):
            bad("schedule is not strictly monotone", "sync_schedule")
    if not 0 < cfg.sync_temperature < 1:
        bad("temperature coefficient must lie in (0, 1)", "sync_temperature")
    if cfg.sync_samples_per_client < 1:
        bad("must be at least 1", "sync_samples_per_client")
    if cfg.sync_max_rounds_per_state < 0:
        bad("must be non-negative (0 disables the per-state cap)", "sync_max_rounds_per_state")
    for attr in ("generator_batch_size", "generator_noise_dim", "generator_hidden",
                 "generator_distill_batch_size", "model_hidden", "model_latent"):
        if getattr(cfg, attr) < 1:
            bad("must be at least 1", attr)
    if cfg.generator_steps < 0:
        bad("must be non-negative", "generator_steps")
    if cfg.generator_distill_weight < 0:
        bad("must be non-negative", "generator_distill_weight")
    if cfg.generator_diversity_weight != 0:
        bad("diversity loss is not implemented; leave at 0", "generator_diversity_weight")
    return cfg


def parse_text(text: str, base: RunConfig | None = None) -> RunConfig:
    items, lines = [], []
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=n)
        key, value = (s.strip() for s in line.split("=", 1))
        items.append((key, value))
        lines.append(n)
    cfg = _apply(base or RunConfig(), items, lines)
    return validate(cfg)


def parse_config(path=None, overrides: Iterable[str] = ()) -> RunConfig:
    """Defaults, then the optional file at ``path``, then ``key=value`` overrides."""
    cfg = RunConfig()
    if path is not None:
        cfg = parse_text(Path(path).read_text(), cfg)
    items = []
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override {ov!r} is not key=value")
        key, value = (s.strip() for s in ov.split("=", 1))
        items.append((key, value))
    return validate(_apply(cfg, items))


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text: every key, sorted, one per line."""
    return "".join(f"{key} = {_format(getattr(cfg, attr))}\n" for key, attr in sorted(KEYS.items()))
