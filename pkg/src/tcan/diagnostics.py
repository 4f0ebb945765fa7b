"""Finite-difference gradient suites for the tensor ops and the full model."""
from __future__ import annotations

import numpy as np

from .cascade import Cascade, Record, build_views
from .model import ModelConfig, TCANParams, data_stats, forward, init_params
from .numerics import T, grad_check
from .numerics.tensor import Parameter
from .rng import stream

OP_TOLERANCE = 1e-6
MODEL_TOLERANCE = 1e-4


def _weighted(out, w):
    # scalar probe with O(1) gradients everywhere
    return T.sum(T.mul(out, w))


def op_cases(seed: int = 0) -> dict:
    """name -> (f, params) for every differentiable primitive, on random inputs."""
    rng = np.random.default_rng(seed)
    P = lambda *shape, lo=-1.0, hi=1.0: Parameter(rng.uniform(lo, hi, size=shape))
    W = lambda *shape: rng.normal(size=shape)
    cases = {}

    def add(name, fn, params, out_shape):
        w = W(*out_shape)
        cases[name] = (lambda: _weighted(fn(), w), params)

    a, b = P(3, 4), P(3, 4)
    add("add", lambda: T.add(a, b), [a, b], (3, 4))
    bias = P(1, 4)
    add("add_broadcast", lambda: T.add(a, bias), [a, bias], (3, 4))
    add("sub", lambda: T.sub(a, b), [a, b], (3, 4))
    add("mul", lambda: T.mul(a, b), [a, b], (3, 4))
    add("scale", lambda: T.scale(a, 0.7), [a], (3, 4))
    m1, m2 = P(3, 5), P(5, 2)
    add("matmul", lambda: T.matmul(m1, m2), [m1, m2], (3, 2))
    bx = P(2, 3, 5)
    add("matmul_batched", lambda: T.matmul(bx, m2), [bx, m2], (2, 3, 2))
    by = P(2, 5, 4)
    add("matmul_batch_batch", lambda: T.matmul(bx, by), [bx, by], (2, 3, 4))
    add("transpose", lambda: T.transpose(m1), [m1], (5, 3))
    add("sigmoid", lambda: T.sigmoid(a), [a], (3, 4))
    add("tanh", lambda: T.tanh(a), [a], (3, 4))
    add("cos", lambda: T.cos(a), [a], (3, 4))
    pos = P(3, 4, lo=0.5, hi=2.0)
    add("sqrt_pos", lambda: T.sqrt_pos(pos), [pos], (3, 4))
    add("gelu", lambda: T.gelu(a), [a], (3, 4))
    add("square", lambda: T.square(a), [a], (3, 4))
    add("concat", lambda: T.concat([a, b], axis=1), [a, b], (3, 8))
    add("sum_axis", lambda: T.sum(a, axis=0), [a], (4,))
    add("mean", lambda: T.reshape(T.mean(a), (1,)), [a], (1,))
    add("take_rows", lambda: T.take_rows(a, [2, 0, 2]), [a], (3, 4))
    add("cols", lambda: T.cols(a, 1, 3), [a], (3, 2))
    add("pick", lambda: T.pick(bx, np.array([2, 0])), [bx], (2, 5))
    add("reshape", lambda: T.reshape(a, (4, 3)), [a], (4, 3))
    add("split_heads", lambda: T.split_heads(bx, 1), [bx], (2, 1, 3, 5))
    sq = P(2, 4, 6)
    add("merge_heads", lambda: T.merge_heads(T.split_heads(sq, 3)), [sq], (2, 4, 6))
    logits = P(2, 4, 4, lo=-2, hi=2)
    mask = rng.random((2, 4, 4)) < 0.5
    mask[:, np.arange(4), np.arange(4)] = True
    add("masked_softmax", lambda: T.masked_softmax(logits, mask), [logits], (2, 4, 4))
    g, beta = P(1, 4, lo=0.5, hi=1.5), P(1, 4)
    add("layernorm", lambda: T.layernorm(a, g, beta), [a, g, beta], (3, 4))
    add("dropout", lambda: T.dropout(a, 0.3, True, np.random.default_rng(7)), [a], (3, 4))
    x = P(2, 5, 3)
    wx, wh, bb = P(3, 8, lo=-0.5, hi=0.5), P(2, 8, lo=-0.5, hi=0.5), P(1, 8, lo=-0.5, hi=0.5)
    lens = np.array([5, 3])
    valid = (np.arange(5)[None, :] < lens[:, None])[..., None]
    w_l = W(2, 5, 2) * valid
    cases["lstm_sequence"] = (lambda: T.sum(T.mul(T.lstm_sequence(x, wx, wh, bb, lengths=lens), w_l)),
                              [x, wx, wh, bb])
    cases["lstm_sequence_reverse"] = (
        lambda: T.sum(T.mul(T.lstm_sequence(x, wx, wh, bb, reverse=True, lengths=lens), w_l)),
        [x, wx, wh, bb])
    return cases


def op_gradcheck(seed: int = 0) -> dict[str, float]:
    """Max relative error of every primitive's backward pass against central differences."""
    out = {}
    for name, (f, params) in op_cases(seed).items():
        out[name] = grad_check(f, params, eps=1e-6)
    return out


def probe_cascade(n: int = 7, seed: int = 0) -> Cascade:
    """A small random tree with distinct, increasing join times."""
    rng = stream(seed, "probe")
    times = np.concatenate([[0.0], np.sort(rng.uniform(0.05, 1.0, size=n - 1))])
    records = [Record(None, "p0", 0.0)]
    for i in range(1, n):
        records.append(Record(f"p{int(rng.integers(i))}", f"p{i}", float(times[i])))
    return Cascade("probe", "p0", 0.0, records)


def _groups(params: TCANParams) -> dict[str, list[Parameter]]:
    out: dict[str, list[Parameter]] = {}
    for name, p in params.named_parameters():
        head = name.split(".")[0]
        key = {"features": "node_features", "te": "time_embedding", "cgat": "graph_encoder",
               "csat": "sequence_encoder", "mlp": "mlp_head"}[head]
        out.setdefault(key, []).append(p)
    return out


def model_gradcheck(cfg: ModelConfig, seed: int = 0, n_nodes: int = 5,
                    max_coords: int | None = 12, eps: float = 1e-3,
                    stencil: int = 4) -> dict[str, float]:
    """Max relative error per module for the end-to-end loss on one probe cascade.

    The model runs in eval mode so the loss is deterministic.  ``max_coords``
    samples that many coordinates of each parameter tensor (``None``: all).
    """
    c = probe_cascade(n_nodes, seed)
    v = build_views(c, 1.0, 1.0)
    v.label = 5
    params = init_params(cfg, v.node_ids, data_stats([v]))
    target = np.log2(v.label + 1.0)

    def f():
        return T.square(T.sub(forward(v, params), target))

    out = {}
    for group, plist in _groups(params).items():
        errs = grad_check(f, plist, eps=eps, max_coords=max_coords, per_param=True, stencil=stencil,
                          rng=stream(seed, "gradcheck", len(out)))
        out[group] = max(errs.values())
    return out
