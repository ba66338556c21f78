"""Global difficulty distribution and the freeze/unfreeze state machine.

The server samples every client's uploaded mixture, pools and sorts the draws,
and reads phase thresholds off that sorted list. A client freezes once more
than a fraction ``v`` of its own draws fall at or below the current threshold;
when every client is frozen the schedule advances and all clients unfreeze.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from . import gmm as _gmm


class ProtocolError(RuntimeError):
    pass


def _decimal(x: float) -> Fraction:
    # Configured fractions such as 0.3 or 0.7 are meant as decimals; going
    # through repr avoids binary artefacts like 0.3 * 10 == 3.0000000000000004.
    return Fraction(repr(float(x)))


@dataclass(frozen=True)
class GlobalPool:
    sorted_samples: np.ndarray
    per_client_counts: tuple
    client_samples: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        s = np.asarray(self.sorted_samples, dtype=np.float64)
        object.__setattr__(self, "sorted_samples", s)
        if len(s) == 0:
            raise ValueError("global pool is empty")
        if len(s) != sum(self.per_client_counts):
            raise ValueError("pool size disagrees with per-client counts")
        if np.any(np.diff(s) < 0):
            raise ValueError("pool samples must be sorted ascending")

    @property
    def size(self) -> int:
        return len(self.sorted_samples)

    @property
    def low(self) -> float:
        return float(self.sorted_samples[0])

    @property
    def high(self) -> float:
        return float(self.sorted_samples[-1])


def build_global_pool(gmms: Sequence[_gmm.GmmParams], per_client_count: int, seed=0, client_ids=None) -> GlobalPool:
    """Draw ``per_client_count`` scores from each mixture, concatenate and sort."""
    if len(gmms) == 0:
        raise ValueError("no client mixtures to pool")
    if per_client_count < 1:
        raise ValueError("per_client_count must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    ids = list(range(len(gmms))) if client_ids is None else list(client_ids)
    draws = {k: _gmm.sample(g, per_client_count, rng) for k, g in zip(ids, gmms)}
    pooled = np.sort(np.concatenate([draws[k] for k in ids]), kind="stable")
    return GlobalPool(pooled, tuple([per_client_count] * len(ids)), draws)


def threshold_index(n: int, level: float) -> int:
    """0-based index of the ``level * n``-th element, rounding up."""
    k = math.ceil(_decimal(level) * n)
    return min(max(k, 1), n) - 1


def threshold_lookup(pool: GlobalPool, level: float) -> float:
    if not 0.0 < level < 1.0:
        raise ValueError(f"training-state level {level} outside (0, 1)")
    return float(pool.sorted_samples[threshold_index(pool.size, level)])


def draw_global_sample(pool: GlobalPool, rng) -> float:
    """Uniform index into the sorted pool."""
    return float(pool.sorted_samples[rng.integers(pool.size)])


def draw_global_samples(pool: GlobalPool, count: int, rng) -> np.ndarray:
    return pool.sorted_samples[rng.integers(pool.size, size=count)]


def freeze_decision(client_samples, threshold: float, v: float) -> bool:
    """True iff strictly more than ``v * N_k`` samples lie at or below ``threshold``."""
    s = np.asarray(client_samples, dtype=np.float64)
    if len(s) == 0:
        raise ValueError("client has no difficulty samples")
    below = int(np.count_nonzero(s <= threshold))
    return below > _decimal(v) * len(s)


@dataclass(frozen=True)
class SyncState:
    schedule: tuple
    num_clients: int
    temperature: float = 0.8
    index: int = 0
    frozen: frozenset = frozenset()
    threshold: Optional[float] = None
    completed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "schedule", tuple(float(t) for t in self.schedule))
        if not self.schedule:
            raise ValueError("schedule must contain at least one training state")
        if any(not 0.0 < t < 1.0 for t in self.schedule):
            raise ValueError("schedule levels must lie in (0, 1)")
        if not 0.0 < self.temperature < 1.0:
            raise ValueError("temperature coefficient must lie in (0, 1)")
        object.__setattr__(self, "frozen", frozenset(self.frozen))
        if not self.frozen <= set(range(self.num_clients)):
            raise ValueError("frozen set names unknown clients")

    @property
    def live(self) -> frozenset:
        return frozenset(range(self.num_clients)) - self.frozen

    @property
    def level(self) -> float:
        return self.schedule[self.index]

    def with_threshold(self, pool: Optional[GlobalPool]) -> "SyncState":
        return replace(self, threshold=None if pool is None else threshold_lookup(pool, self.level))

    def freeze(self, clients) -> "SyncState":
        clients = frozenset(clients)
        if not clients <= set(range(self.num_clients)):
            raise ValueError("cannot freeze unknown clients")
        return replace(self, frozen=self.frozen | clients)


def advance_state(state: SyncState, pool: Optional[GlobalPool] = None) -> SyncState:
    """Move to the next training state once every client is frozen."""
    if state.live:
        raise ProtocolError(f"cannot advance with {len(state.live)} live clients")
    if state.index + 1 >= len(state.schedule):
        return replace(state, frozen=frozenset(), completed=True)
    nxt = replace(state, index=state.index + 1, frozen=frozenset())
    return nxt.with_threshold(pool)
