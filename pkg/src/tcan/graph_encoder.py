"""Cascade graph attention encoder.

Stacked multi-head self-attention layers whose softmax is restricted by the
cascade adjacency (plus self-loops), each followed by a feed-forward block,
residual connection and LayerNorm.  The node rows of the last layer are
sum-pooled into one graph vector.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .numerics import T
from .numerics.tensor import Parameter, Tensor


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


@dataclass
class CGATLayerParams:
    # head h uses columns [h*d_head, (h+1)*d_head) of w_q / w_k / w_v
    w_q: Parameter
    w_k: Parameter
    w_v: Parameter
    w_o: Parameter
    ffn_w1: Parameter
    ffn_b1: Parameter
    ffn_w2: Parameter
    ffn_b2: Parameter
    ln_gain: Parameter
    ln_bias: Parameter
    heads: int
    # only used by the conventional two-residual block
    ln0_gain: Parameter | None = None
    ln0_bias: Parameter | None = None

    @property
    def width(self) -> int:
        return self.w_q.shape[0]

    @property
    def d_head(self) -> int:
        return self.w_q.shape[1] // self.heads

    def named_parameters(self, prefix: str) -> Iterator[tuple[str, Parameter]]:
        for f in ("w_q", "w_k", "w_v", "w_o", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2",
                  "ln_gain", "ln_bias", "ln0_gain", "ln0_bias"):
            p = getattr(self, f)
            if p is not None:
                yield f"{prefix}.{f}", p

    @classmethod
    def init(cls, width: int, heads: int, ffn_inner: int, rng_for, prefix: str,
             conventional: bool = False) -> "CGATLayerParams":
        """``rng_for(name)`` returns the generator used for parameter ``name``."""
        if heads < 1 or width % heads:
            raise ValueError(f"{heads} heads do not divide width {width}")

        def P(field, arr):
            return Parameter(arr, f"{prefix}.{field}")

        return cls(
            w_q=P("w_q", _xavier(rng_for(f"{prefix}.w_q"), width, width)),
            w_k=P("w_k", _xavier(rng_for(f"{prefix}.w_k"), width, width)),
            w_v=P("w_v", _xavier(rng_for(f"{prefix}.w_v"), width, width)),
            w_o=P("w_o", _xavier(rng_for(f"{prefix}.w_o"), width, width)),
            ffn_w1=P("ffn_w1", _xavier(rng_for(f"{prefix}.ffn_w1"), width, ffn_inner)),
            ffn_b1=P("ffn_b1", np.zeros((1, ffn_inner))),
            ffn_w2=P("ffn_w2", _xavier(rng_for(f"{prefix}.ffn_w2"), ffn_inner, width)),
            ffn_b2=P("ffn_b2", np.zeros((1, width))),
            ln_gain=P("ln_gain", np.ones((1, width))),
            ln_bias=P("ln_bias", np.zeros((1, width))),
            heads=heads,
            ln0_gain=P("ln0_gain", np.ones((1, width))) if conventional else None,
            ln0_bias=P("ln0_bias", np.zeros((1, width))) if conventional else None,
        )


def attention_mask(adjacency: np.ndarray, symmetric: bool = False) -> np.ndarray:
    """Row i may attend to j iff j -> i is an edge (or i == j)."""
    adj = np.asarray(adjacency, dtype=bool)
    mask = adj.T.copy()
    if symmetric:
        mask |= adj
    np.fill_diagonal(mask, True)
    return mask


def attend(x: Tensor, mask: np.ndarray, layer: CGATLayerParams, train: bool = False,
           rng: np.random.Generator | None = None, dropout: float = 0.0):
    """Masked multi-head scaled dot-product attention; returns (output, per-head alphas).

    ``x`` is n x width (or B x n x width with a B x n x n mask).
    """
    n, width = x.shape[-2:]
    if width != layer.width:
        raise ValueError(f"input width {width} != layer width {layer.width}")
    if mask.shape[-2:] != (n, n):
        raise ValueError(f"mask shape {mask.shape} does not match {n} nodes")
    H = layer.heads
    q = T.split_heads(T.matmul(x, layer.w_q), H)
    k = T.split_heads(T.matmul(x, layer.w_k), H)
    v = T.split_heads(T.matmul(x, layer.w_v), H)
    logits = T.scale(T.matmul(q, T.transpose(k)), 1.0 / np.sqrt(width))
    mask = np.expand_dims(mask, -3)
    alpha = T.masked_softmax(logits, mask)
    alphas = [alpha.data[..., h, :, :] for h in range(H)]
    alpha = T.dropout(alpha, dropout, train, rng, where=mask)
    heads = T.merge_heads(T.matmul(alpha, v))
    return T.matmul(heads, layer.w_o), alphas


def ffn(x: Tensor, layer: CGATLayerParams) -> Tensor:
    hidden = T.gelu(T.add(T.matmul(x, layer.ffn_w1), layer.ffn_b1))
    return T.add(T.matmul(hidden, layer.ffn_w2), layer.ffn_b2)


def cgat_layer(x: Tensor, mask: np.ndarray, layer: CGATLayerParams, train: bool = False,
               rng: np.random.Generator | None = None, dropout: float = 0.0,
               residual: str = "outer"):
    """One encoder layer.

    ``residual="outer"``: ``LN(FFN(Attn(x)) + x)``, the skip taken from the layer
    input.  ``residual="conventional"``: ``h = LN0(x + Attn(x)); LN(h + FFN(h))``.
    """
    h, alphas = attend(x, mask, layer, train, rng, dropout)
    if residual == "outer":
        out = T.add(T.dropout(ffn(h, layer), dropout, train, rng), x)
    elif residual == "conventional":
        h = T.layernorm(T.add(x, h), layer.ln0_gain, layer.ln0_bias)
        out = T.add(T.dropout(ffn(h, layer), dropout, train, rng), h)
    else:
        raise ValueError(f"unknown residual mode {residual!r}")
    return T.layernorm(out, layer.ln_gain, layer.ln_bias), alphas


def encode_graph(x: Tensor, mask: np.ndarray, layers: list[CGATLayerParams], train: bool = False,
                 rng: np.random.Generator | None = None, dropout: float = 0.0,
                 residual: str = "outer", node_mask: np.ndarray | None = None,
                 return_nodes: bool = False):
    """Run the layer stack and sum-pool the node rows.

    Returns ``(h_g, trace)``: ``h_g`` is 1 x width (B x width for a batch) and
    ``trace[l][h]`` the attention matrix of head ``h`` in layer ``l``.
    ``node_mask`` (B x n) excludes padded rows from the pooling.
    """
    if not layers:
        raise ValueError("need at least one CGAT layer")
    trace = []
    for layer in layers:
        x, alphas = cgat_layer(x, mask, layer, train, rng, dropout, residual)
        trace.append(alphas)
    nodes = x
    if node_mask is not None:
        x = T.mul(x, np.asarray(node_mask, dtype=np.float64)[..., None])
    h_g = T.sum(x, axis=-2)
    if h_g.ndim == 1:
        h_g = T.reshape(h_g, (1, -1))
    if return_nodes:
        return h_g, trace, nodes
    return h_g, trace
