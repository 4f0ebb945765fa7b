"""Learnable time embedding and node-feature lookup.

A join time ``t`` maps to ``[cos(omega * t + phase), w_l * t + b_l, w_s * sqrt(t)]``:
``periodic_dim`` cosine channels followed by one linear and one square-root
channel.  The embedding is concatenated onto the node's feature row.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .numerics import T
from .numerics.tensor import Parameter, Tensor

MODES = ("full", "pl", "none")


@dataclass
class TEParams:
    omega: Parameter  # (1, periodic_dim) frequencies
    phase: Parameter  # (1, periodic_dim)
    w_l: Parameter  # (1, 1)
    b_l: Parameter  # (1, 1)
    w_s: Parameter  # (1, 1)

    @property
    def periodic_dim(self) -> int:
        return self.omega.shape[1]

    def named_parameters(self, prefix: str = "te") -> Iterator[tuple[str, Parameter]]:
        yield f"{prefix}.omega", self.omega
        yield f"{prefix}.phase", self.phase
        yield f"{prefix}.w_l", self.w_l
        yield f"{prefix}.b_l", self.b_l
        yield f"{prefix}.w_s", self.w_s

    @classmethod
    def init(cls, periodic_dim: int, t_obs: float, gap_range: tuple[float, float],
             rng: np.random.Generator) -> "TEParams":
        """Log-uniform frequencies spanning the observed repost gaps; linear and
        sqrt channels scaled so they are O(1) at ``t_obs``."""
        if periodic_dim < 1:
            raise ValueError("periodic_dim must be >= 1")
        t_min, t_max = gap_range
        if not (0 < t_min <= t_max):
            raise ValueError(f"bad gap range {gap_range}")
        lo, hi = np.log(2 * np.pi / t_max), np.log(2 * np.pi / t_min)
        omega = np.exp(rng.uniform(lo, hi, size=(1, periodic_dim)))
        return cls(
            omega=Parameter(omega, "te.omega"),
            phase=Parameter(np.zeros((1, periodic_dim)), "te.phase"),
            w_l=Parameter([[1.0 / t_obs]], "te.w_l"),
            b_l=Parameter([[0.0]], "te.b_l"),
            w_s=Parameter([[1.0 / np.sqrt(t_obs)]], "te.w_s"),
        )


def time_dim(periodic_dim: int, mode: str = "full") -> int:
    return {"full": periodic_dim + 2, "pl": periodic_dim + 1, "none": 0}[mode]


def embed_sequence(times, p: TEParams, mode: str = "full") -> Tensor:
    """Embed each time as one row: n times -> n x time_dim (B x n -> B x n x time_dim)."""
    if mode not in MODES or mode == "none":
        raise ValueError(f"embed_sequence mode must be 'full' or 'pl', got {mode!r}")
    t = np.asarray(times, dtype=np.float64)
    if t.size == 0:
        raise ValueError("cannot embed an empty time sequence")
    if (t < 0).any() or not np.isfinite(t).all():
        raise ValueError("times must be finite and non-negative")
    t = t[..., None]
    tt = T.Tensor(t)
    periodic = T.cos(T.add(T.matmul(tt, p.omega), p.phase))
    linear = T.add(T.mul(tt, p.w_l), p.b_l)
    parts = [periodic, linear]
    if mode == "full":
        parts.append(T.mul(T.Tensor(np.sqrt(t)), p.w_s))
    return T.concat(parts, axis=-1)


def embed_time(t: float, p: TEParams, mode: str = "full") -> Tensor:
    if t < 0:
        raise ValueError(f"negative time {t}")
    return embed_sequence([t], p, mode)


def fuse(x: Tensor, h_t: Tensor | None) -> Tensor:
    """Concatenate node features (first) with time embeddings; identity without them."""
    if h_t is None:
        return x
    if x.shape[:-1] != h_t.shape[:-1]:
        raise ValueError(f"row mismatch: features {x.shape} vs time embedding {h_t.shape}")
    return T.concat([x, h_t], axis=-1)


class NodeFeatureTable:
    """Standard-normal feature row per known node id."""

    def __init__(self, vocab: Sequence[str], dim: int, rng: np.random.Generator | None = None,
                 name: str = "features"):
        self.vocab = list(vocab)
        self.index = {v: i for i, v in enumerate(self.vocab)}
        if len(self.index) != len(self.vocab):
            raise ValueError("duplicate node ids in vocabulary")
        data = rng.standard_normal((len(self.vocab), dim)) if rng is not None else np.zeros((len(self.vocab), dim))
        self.F = Parameter(data, name)

    def rows(self, node_ids: Sequence[str]) -> np.ndarray:
        try:
            return np.array([self.index[v] for v in node_ids], dtype=np.int64)
        except KeyError as e:
            raise ValueError(f"node id {e.args[0]!r} is not in the feature vocabulary") from None

    def lookup(self, node_ids: Sequence[str]) -> Tensor:
        return T.take_rows(self.F, self.rows(node_ids))
