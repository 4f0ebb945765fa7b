"""Desk-scale synthetic benchmark: generate, window, filter and split.

Raw cascades are drawn one index at a time until ``n_keep`` of them have at
least ``min_obs`` nodes inside the observation window.  The window end is a
quantile of all non-root join times in a pilot batch of raw cascades.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .cascade import Cascade, CascadeViews, DatasetSplit, build_views, split_dataset
from .synthgen import GenConfig, generate_one


@dataclass
class Benchmark:
    split: DatasetSplit
    cascades: list[Cascade]  # the kept raw cascades, in generation order
    t_obs: float
    t_end: float
    n_raw: int  # raw cascades drawn to reach n_keep survivors
    gen: GenConfig


def join_time_quantile(cascades, q: float) -> float:
    times = [r.time for c in cascades for r in c.records if r.child != c.root]
    if not times:
        raise ValueError("no non-root joins to take a quantile of")
    return float(np.quantile(times, q))


def make_benchmark(n_keep: int = 2000, seed: int = 0, min_obs: int = 10, quantile: float = 0.3,
                   ratios=(0.7, 0.15, 0.15), pilot: int = 5000, max_raw: int = 10 ** 6,
                   **gen_overrides) -> Benchmark:
    gen = replace(GenConfig(seed=seed, n_cascades=0), **gen_overrides)
    gen.validate()
    t_obs = join_time_quantile([generate_one(gen, i) for i in range(pilot)], quantile)
    kept: list[Cascade] = []
    views: list[CascadeViews] = []
    i = 0
    while len(views) < n_keep:
        if i >= max_raw:
            raise RuntimeError(f"only {len(views)} of {n_keep} cascades passed the filter "
                               f"after {max_raw} draws")
        c = generate_one(gen, i)
        i += 1
        # cheap pre-check before building the full views
        if sum(r.time <= t_obs for r in c.records) < min_obs:
            continue
        kept.append(c)
        views.append(build_views(c, t_obs, gen.t_end))
    return Benchmark(split_dataset(views, ratios, seed), kept, t_obs, gen.t_end, i, gen)
