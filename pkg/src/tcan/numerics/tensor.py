"""Dense float64 tensors with a dynamic reverse-mode tape.

Every differentiable op computes its value with numpy and, when gradient
recording is on and any input requires a gradient, appends a node to the
current thread's tape.  :func:`backward` walks the tape in reverse,
accumulates into :class:`Parameter` gradients and clears the tape.
"""
from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


class _State(threading.local):
    def __init__(self):
        self.tape: list[Tensor] = []
        self.enabled = True


_state = _State()


@contextlib.contextmanager
def no_grad():
    prev = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def is_grad_enabled() -> bool:
    return _state.enabled


def clear_tape():
    _state.tape.clear()


def tape_length() -> int:
    return len(_state.tape)


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __neg__(self): return scale(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


class Parameter(Tensor):
    """A learnable tensor with gradient and Adam moment buffers."""

    __slots__ = ("grad", "adam_m", "adam_v", "name")

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check(out: np.ndarray, op: str):
    # NaN and Inf both survive a sum, and one reduction is much cheaper than isfinite().all()
    if not math.isfinite(out.sum()):
        if not np.isfinite(out).all():
            raise NonFiniteError(f"{op} produced a non-finite value")


def _make(out: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    _check(out, op)
    t = Tensor.__new__(Tensor)
    t.data = out
    t.op = op
    if _state.enabled and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._backward = backward
        _state.tape.append(t)
    else:
        t.requires_grad = False
        t._parents = ()
        t._backward = None
    return t


def backward(loss: Tensor):
    """Back-propagate from a scalar ``loss`` into every reachable Parameter."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = _state.tape
    try:
        if isinstance(loss, Parameter):
            loss.grad += 1.0
            return
        if not loss.requires_grad:
            raise ValueError("loss does not depend on any parameter (or was built under no_grad)")
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(tape):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            pgrads = node._backward(g)
            for p, pg in zip(node._parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                if isinstance(p, Parameter):
                    p.grad += pg
                else:
                    k = id(p)
                    if k in grads:
                        grads[k] = grads[k] + pg
                    else:
                        grads[k] = pg
    finally:
        tape.clear()


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and linear-algebra ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; ``a`` may carry a leading batch axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or b.ndim > a.ndim:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ _swap(bd)
        if bd.ndim == 2 and ad.ndim > 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _swap(ad) @ g
        return ga, gb

    return _make(ad @ bd, (a, b), bw, "matmul")


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = as_tensor(a)
    return _make(_swap(a.data), (a,), lambda g: (_swap(g),), "transpose")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sig(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def cos(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _make(np.cos(x), (a,), lambda g: (-g * np.sin(x),), "cos")


def sqrt_pos(a) -> Tensor:
    """Square root for non-negative input; the gradient at exactly 0 is taken as 0."""
    a = as_tensor(a)
    if (a.data < 0).any():
        raise ValueError("sqrt_pos got a negative input")
    out = np.sqrt(a.data)

    def bw(g):
        with np.errstate(divide="ignore"):
            d = np.where(out > 0, 0.5 / np.where(out > 0, out, 1.0), 0.0)
        return (g * d,)

    return _make(out, (a,), bw, "sqrt_pos")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a) -> Tensor:
    """GELU, tanh approximation."""
    a = as_tensor(a)
    x = a.data
    u = _GELU_C * (x + 0.044715 * (x * x * x))
    th = np.tanh(u)
    out = 0.5 * x * (1.0 + th)

    def bw(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du),)

    return _make(out, (a,), bw, "gelu")


def square(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _make(x * x, (a,), lambda g: (2.0 * g * x,), "square")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat of nothing")
    out = np.concatenate([t.data for t in ts], axis=axis)
    ax = axis % out.ndim
    cuts = np.cumsum([t.shape[ax] for t in ts])[:-1]
    return _make(out, ts, lambda g: tuple(np.split(g, cuts, axis=ax)), "concat")


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(out), (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def take_rows(a, idx) -> Tensor:
    """Gather rows ``a[idx]``; the gradient scatter-adds back (one-hot lookup)."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    shape = a.shape

    def bw(g):
        if isinstance(a, Parameter):
            # scatter straight into the (possibly large) table's gradient
            np.add.at(a.grad, idx, g)
            return (None,)
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), bw, "take_rows")


def cols(a, start: int, stop: int) -> Tensor:
    """Slice ``start:stop`` of the last axis."""
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        out[..., start:stop] = g
        return (out,)

    return _make(a.data[..., start:stop], (a,), bw, "cols")


def pick(a, idx) -> Tensor:
    """``out[b] = a[b, idx[b]]`` for a batch of row matrices (B, n, d) -> (B, d)."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    shape = a.shape
    ar = np.arange(shape[0])

    def bw(g):
        out = np.zeros(shape)
        out[ar, idx] = g
        return (out,)

    return _make(a.data[ar, idx], (a,), bw, "pick")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return _make(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),), "swapaxes")


def split_heads(a, heads: int) -> Tensor:
    """... x n x (heads*d) -> ... x heads x n x d."""
    a = as_tensor(a)
    *lead, n, w = a.shape
    if w % heads:
        raise ValueError(f"{heads} heads do not divide width {w}")
    return swapaxes(reshape(a, (*lead, n, heads, w // heads)), -3, -2)


def merge_heads(a) -> Tensor:
    """Inverse of :func:`split_heads`."""
    a = as_tensor(a)
    *lead, h, n, d = a.shape
    return reshape(swapaxes(a, -3, -2), (*lead, n, h * d))


# ---------------------------------------------------------------------------
# fused ops


def masked_softmax(logits, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to entries where ``mask`` is true.

    Masked-out entries are exactly 0.  ``mask`` must broadcast to the logits.
    """
    logits = as_tensor(logits)
    try:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
    except ValueError:
        raise ValueError(f"mask shape {np.shape(mask)} does not fit logits {logits.shape}") from None
    if not mask.any(axis=-1).all():
        raise ValueError("masked_softmax: a row has no unmasked entry")
    x = np.where(mask, logits.data, -np.inf)
    x -= x.max(axis=-1, keepdims=True)
    out = np.exp(x, out=x)  # exp(-inf) is exactly 0
    out /= out.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (logits,), bw, "masked_softmax")


def layernorm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalise each row to zero mean / unit variance, then ``gain * xhat + bias``."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data

    def bw(g):
        gx = g * gd
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return (dx, _unbroadcast(g * xhat, gd.shape), _unbroadcast(g, bias.shape))

    return _make(out, (x, gain, bias), bw, "layernorm")


def dropout(a, p: float, train: bool, rng: np.random.Generator | None, where=None) -> Tensor:
    """Inverted dropout: zero with prob ``p`` and scale survivors by 1/(1-p); identity in eval.

    With a boolean ``where`` only those entries are candidates (and only they
    consume random draws); use it for inputs known to be zero elsewhere.
    """
    a = as_tensor(a)
    if not train or p <= 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout p must be in [0, 1)")
    if where is None:
        keep = (rng.random(a.shape) >= p) / (1.0 - p)
    else:
        where = np.broadcast_to(np.asarray(where, dtype=bool), a.shape)
        keep = np.ones(a.shape)
        keep[where] = (rng.random(int(where.sum())) >= p) / (1.0 - p)
    return _make(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


def _sig(x):
    # tanh form: one pass, cannot overflow
    out = np.tanh(0.5 * x)
    out += 1.0
    out *= 0.5
    return out


def reverse_index(n: int, lengths) -> np.ndarray:
    """Per-row permutation reversing the first ``lengths[b]`` steps (padding stays put)."""
    lengths = np.asarray(lengths, dtype=np.int64)
    t = np.arange(n)[None, :]
    return np.where(t < lengths[:, None], lengths[:, None] - 1 - t, t)


def lstm_sequence(x, w_x, w_h, b, reverse: bool = False, lengths=None) -> Tensor:
    """Run an LSTM over the rows of ``x`` as one tape node.

    ``x`` is n x in, or B x n x in for a padded batch whose valid prefix
    lengths are ``lengths``.  ``w_x`` (in x 4h), ``w_h`` (h x 4h) and ``b``
    (1 x 4h) stack the gates in the order input, forget, output, candidate.
    Returns hidden states aligned with the input steps.  With ``reverse`` each
    sequence is consumed from its last valid step back to its first.  Initial
    states are zero.  Outputs at padded steps are finite but meaningless.
    """
    x, w_x, w_h, b = as_tensor(x), as_tensor(w_x), as_tensor(w_h), as_tensor(b)
    single = x.ndim == 2
    xd = x.data[None] if single else x.data
    B, n, _ = xd.shape
    hd = w_h.shape[0]
    if w_x.shape != (xd.shape[2], 4 * hd) or w_h.shape != (hd, 4 * hd) or b.shape[-1] != 4 * hd:
        raise ValueError(f"lstm_sequence: inconsistent shapes x={x.shape} w_x={w_x.shape} "
                         f"w_h={w_h.shape} b={b.shape}")
    lengths = np.full(B, n) if lengths is None else np.asarray(lengths, dtype=np.int64)
    perm = reverse_index(n, lengths) if reverse else None
    rows = np.arange(B)[:, None]
    if perm is not None:
        xd = xd[rows, perm]
    WH = w_h.data
    pre_x = xd @ w_x.data + b.data.reshape(1, 1, -1)
    H = np.zeros((B, n, hd))
    C = np.zeros((B, n, hd))
    G = np.zeros((B, n, 4 * hd))  # post-activation j, f, o, c~
    h = np.zeros((B, hd))
    c = np.zeros((B, hd))
    for t in range(n):
        z = pre_x[:, t] + h @ WH
        sg = _sig(z[:, :3 * hd])
        ct = np.tanh(z[:, 3 * hd:])
        c = sg[:, hd:2 * hd] * c + sg[:, :hd] * ct
        h = sg[:, 2 * hd:] * np.tanh(c)
        G[:, t, :3 * hd] = sg
        G[:, t, 3 * hd:] = ct
        H[:, t] = h
        C[:, t] = c
    out = H[rows, perm] if perm is not None else H

    def bw(gH):
        gH = gH[None] if single else gH
        if perm is not None:
            gH = gH[rows, perm]
        # every factor that does not depend on the recurrence, for all steps at once
        j, f, o, ct = G[..., :hd], G[..., hd:2 * hd], G[..., 2 * hd:3 * hd], G[..., 3 * hd:]
        tc = np.tanh(C)
        c_prev = np.zeros_like(C)
        c_prev[:, 1:] = C[:, :-1]
        dtc = o * (1.0 - tc * tc)
        A = np.concatenate([ct * j * (1.0 - j), c_prev * f * (1.0 - f),
                            tc * o * (1.0 - o), j * (1.0 - ct * ct)], axis=-1)
        WHt = np.ascontiguousarray(WH.T)
        dpre = np.empty((B, n, 4 * hd))
        buf = np.empty((B, 4 * hd))
        dh_next = np.zeros((B, hd))
        dc_next = np.zeros((B, hd))
        for t in range(n - 1, -1, -1):
            dh = gH[:, t] + dh_next
            dc = dc_next + dh * dtc[:, t]
            buf[:, :hd] = dc
            buf[:, hd:2 * hd] = dc
            buf[:, 2 * hd:3 * hd] = dh
            buf[:, 3 * hd:] = dc
            dz = np.multiply(buf, A[:, t], out=dpre[:, t])
            dh_next = dz @ WHt
            dc_next = dc * f[:, t]
        h_prev = np.zeros_like(H)
        h_prev[:, 1:] = H[:, :-1]
        dx = dpre @ w_x.data.T
        if perm is not None:
            dx = dx[rows, perm]
        flat = dpre.reshape(-1, 4 * hd)
        dwx = xd.reshape(-1, xd.shape[2]).T @ flat
        dwh = h_prev.reshape(-1, hd).T @ flat
        db = flat.sum(axis=0).reshape(b.shape)
        return (dx[0] if single else dx), dwx, dwh, db

    return _make(out[0] if single else out, (x, w_x, w_h, b), bw, "lstm_sequence")
