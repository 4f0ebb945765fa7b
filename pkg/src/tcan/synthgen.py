"""Synthetic cascades from a subcritical branching process.

Each node draws its number of direct reposts once, when it joins: zero
with probability ``1 - q``, otherwise a power-law count ``k >= 1`` with
``P(k) ~ k**-alpha``.  ``q`` is set so the mean offspring count equals
``branching_mean``.  Every child joins at ``parent_time + Exp(decay_rate)``,
so the repost rate of a node decays exponentially with its age.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .cascade import Cascade, Record, _sort_key
from .rng import stream


@dataclass
class GenConfig:
    n_cascades: int = 1000
    branching_mean: float = 0.9
    decay_rate: float = 1.0
    alpha: float = 2.5
    max_size: int = 1000
    t_end: float = 10.0
    seed: int = 0
    n_users: int = 0  # 0: fresh node ids per cascade; >0: draw ids from a shared pool

    def validate(self):
        if self.n_cascades < 0:
            raise ValueError("n_cascades must be >= 0")
        if self.branching_mean < 0 or self.decay_rate <= 0 or self.t_end <= 0:
            raise ValueError("branching_mean must be >= 0, decay_rate and t_end > 0")
        if self.alpha <= 1:
            raise ValueError("alpha must be > 1")
        if self.max_size < 1:
            raise ValueError("max_size must be >= 1")
        if self.branching_mean > active_mean(self.alpha, self.max_size):
            raise ValueError(
                f"branching_mean {self.branching_mean} exceeds the mean of an always-active node "
                f"({active_mean(self.alpha, self.max_size):.4f}) for alpha={self.alpha}"
            )


@lru_cache(maxsize=64)
def _powerlaw_cdf(alpha: float, xmax: int) -> np.ndarray:
    k = np.arange(xmax + 1, dtype=np.float64)
    logw = -alpha * np.log1p(k)
    w = np.exp(logw - logw.max())
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    cdf[-1] = 1.0
    return cdf


def powerlaw_pmf(alpha: float, xmax: int) -> np.ndarray:
    return np.diff(_powerlaw_cdf(alpha, xmax), prepend=0.0)


def sample_powerlaw(alpha: float, xmax: int, rng: np.random.Generator) -> int:
    """Draw k in [0, xmax] with P(k) proportional to (k+1)**-alpha."""
    if xmax <= 0:
        return 0
    cdf = _powerlaw_cdf(float(alpha), int(xmax))
    return int(np.searchsorted(cdf, rng.random(), side="right"))


@lru_cache(maxsize=64)
def active_mean(alpha: float, max_size: int) -> float:
    """Mean offspring of a node that reposts at least once."""
    if max_size <= 1:
        return 0.0
    pmf = powerlaw_pmf(alpha, max_size - 2)
    return float(1.0 + np.dot(np.arange(len(pmf)), pmf))


def _offspring(cfg: GenConfig, q: float, rng: np.random.Generator) -> int:
    if rng.random() >= q:
        return 0
    return 1 + sample_powerlaw(cfg.alpha, cfg.max_size - 2, rng)


def generate_one(cfg: GenConfig, index: int) -> Cascade:
    rng = stream(cfg.seed, "gen", index)
    am = active_mean(cfg.alpha, cfg.max_size)
    q = cfg.branching_mean / am if am > 0 else 0.0

    used = set()

    def new_id(k: int) -> str | None:
        if cfg.n_users <= 0:
            return f"c{index}n{k}"
        if len(used) >= cfg.n_users:
            return None
        while True:
            u = f"u{int(rng.integers(cfg.n_users))}"
            if u not in used:
                used.add(u)
                return u

    def spawn(parent: str, t: float):
        nonlocal seq
        for _ in range(_offspring(cfg, q, rng)):
            tc = t + rng.exponential(1.0 / cfg.decay_rate)
            if tc <= cfg.t_end:
                heapq.heappush(heap, (tc, seq, parent))
                seq += 1

    root = new_id(0)
    records = [Record(None, root, 0.0)]
    heap: list[tuple[float, int, str]] = []
    seq = 0
    spawn(root, 0.0)
    # arrivals are realised in time order, so a capped cascade keeps its earliest joiners
    while heap and len(records) < cfg.max_size:
        tc, _, parent = heapq.heappop(heap)
        child = new_id(len(records))
        if child is None:
            break
        records.append(Record(parent, child, float(tc)))
        spawn(child, tc)
    records.sort(key=_sort_key(root))
    return Cascade(f"{index}", root, 0.0, records)


def generate(cfg: GenConfig) -> list[Cascade]:
    cfg.validate()
    return [generate_one(cfg, i) for i in range(cfg.n_cascades)]
