"""Cascade sequence encoder: stacked bidirectional LSTMs with attention pooling."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .numerics import T
from .numerics.tensor import Parameter, Tensor

GATES = ("j", "f", "o", "c")  # input, forget, output, candidate


@dataclass
class LSTMParams:
    w_x: dict[str, Parameter]  # gate -> (input_dim, hidden)
    w_h: dict[str, Parameter]  # gate -> (hidden, hidden)
    b: dict[str, Parameter]  # gate -> (1, hidden)

    @property
    def hidden(self) -> int:
        return self.w_h["j"].shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_x["j"].shape[0]

    def named_parameters(self, prefix: str) -> Iterator[tuple[str, Parameter]]:
        for g in GATES:
            yield f"{prefix}.w_x{g}", self.w_x[g]
        for g in GATES:
            yield f"{prefix}.w_h{g}", self.w_h[g]
        for g in GATES:
            yield f"{prefix}.b_{g}", self.b[g]

    @classmethod
    def init(cls, input_dim: int, hidden: int, rng_for, prefix: str) -> "LSTMParams":
        lim = 1.0 / np.sqrt(hidden)

        def U(name, shape):
            return Parameter(rng_for(f"{prefix}.{name}").uniform(-lim, lim, size=shape), f"{prefix}.{name}")

        return cls(
            w_x={g: U(f"w_x{g}", (input_dim, hidden)) for g in GATES},
            w_h={g: U(f"w_h{g}", (hidden, hidden)) for g in GATES},
            b={g: U(f"b_{g}", (1, hidden)) for g in GATES},
        )

    def fused(self):
        """Gate matrices stacked column-wise in j, f, o, c order (differentiable)."""
        return (T.concat([self.w_x[g] for g in GATES], axis=1),
                T.concat([self.w_h[g] for g in GATES], axis=1),
                T.concat([self.b[g] for g in GATES], axis=1))


@dataclass
class APParams:
    w_q: Parameter
    w_k: Parameter
    w_v: Parameter

    def named_parameters(self, prefix: str = "csat.ap") -> Iterator[tuple[str, Parameter]]:
        yield f"{prefix}.w_q", self.w_q
        yield f"{prefix}.w_k", self.w_k
        yield f"{prefix}.w_v", self.w_v

    @classmethod
    def init(cls, d_h: int, rng_for, prefix: str = "csat.ap") -> "APParams":
        lim = np.sqrt(6.0 / (2 * d_h))
        mk = lambda n: Parameter(rng_for(f"{prefix}.{n}").uniform(-lim, lim, size=(d_h, d_h)), f"{prefix}.{n}")
        return cls(mk("w_q"), mk("w_k"), mk("w_v"))


@dataclass
class BiLSTMLayer:
    fwd: LSTMParams
    bwd: LSTMParams


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, p: LSTMParams, return_gates: bool = False):
    """One LSTM step from primitive ops; rows of ``x`` are independent samples."""
    def pre(g):
        return T.add(T.add(T.matmul(x, p.w_x[g]), T.matmul(h_prev, p.w_h[g])), p.b[g])

    j = T.sigmoid(pre("j"))
    f = T.sigmoid(pre("f"))
    o = T.sigmoid(pre("o"))
    c_tilde = T.tanh(pre("c"))
    c = T.add(T.mul(f, c_prev), T.mul(j, c_tilde))
    h = T.mul(o, T.tanh(c))
    if return_gates:
        return h, c, (j, f, o, c_tilde)
    return h, c


def lstm_run(x: Tensor, p: LSTMParams, reverse: bool = False, lengths=None) -> Tensor:
    """Hidden state for every step of ``x`` (zero initial state)."""
    return T.lstm_sequence(x, *p.fused(), reverse=reverse, lengths=lengths)


def lstm_run_cells(x: Tensor, p: LSTMParams, reverse: bool = False) -> Tensor:
    """Same as :func:`lstm_run` for one n x in sequence, unrolled through
    :func:`lstm_cell`.  Slow; kept as an independent check on the fused op."""
    n = x.shape[0]
    h = T.Tensor(np.zeros((1, p.hidden)))
    c = T.Tensor(np.zeros((1, p.hidden)))
    rows = [None] * n
    for t in (range(n - 1, -1, -1) if reverse else range(n)):
        h, c = lstm_cell(T.take_rows(x, [t]), h, c, p)
        rows[t] = h
    return T.concat(rows, axis=0)


def bilstm_stack(x: Tensor, layers: list[BiLSTMLayer], lengths=None):
    """Returns ``(H_s, lhs)``.

    ``H_s`` holds the last layer's per-step outputs (forward and backward
    halves concatenated), ``lhs`` the last forward state next to the last
    backward state (the one at step 0).  Shapes: n x d_h and 1 x d_h, or
    B x n x d_h and B x d_h for a padded batch with ``lengths``.
    """
    n = x.shape[-2]
    if n < 1:
        raise ValueError("empty sequence")
    h = x
    for layer in layers:
        hf = lstm_run(h, layer.fwd, lengths=lengths)
        hb = lstm_run(h, layer.bwd, reverse=True, lengths=lengths)
        h = T.concat([hf, hb], axis=-1)
    if x.ndim == 2:
        lhs = T.concat([T.take_rows(hf, [n - 1]), T.take_rows(hb, [0])], axis=1)
    else:
        B = x.shape[0]
        last = np.full(B, n - 1) if lengths is None else np.asarray(lengths) - 1
        lhs = T.concat([T.pick(hf, last), T.pick(hb, np.zeros(B, dtype=np.int64))], axis=-1)
    return h, lhs


def attn_pool(h: Tensor, p: APParams, node_mask: np.ndarray | None = None,
              return_alpha: bool = False):
    """Unmasked scaled dot-product self-attention over the steps, then sum pooling.

    For a padded batch ``node_mask`` (B x n) hides padded steps both as keys
    and from the sum.
    """
    n, d_h = h.shape[-2:]
    q = T.matmul(h, p.w_q)
    k = T.matmul(h, p.w_k)
    v = T.matmul(h, p.w_v)
    logits = T.scale(T.matmul(q, T.transpose(k)), 1.0 / np.sqrt(d_h))
    if node_mask is None:
        key_mask = np.ones((n, n), dtype=bool)
    else:
        key_mask = np.broadcast_to(np.asarray(node_mask, dtype=bool)[:, None, :], logits.shape)
    alpha = T.masked_softmax(logits, key_mask)
    att = T.matmul(alpha, v)
    if node_mask is not None:
        att = T.mul(att, np.asarray(node_mask, dtype=np.float64)[..., None])
    out = T.sum(att, axis=-2)
    if out.ndim == 1:
        out = T.reshape(out, (1, -1))
    if return_alpha:
        return out, alpha.data
    return out
