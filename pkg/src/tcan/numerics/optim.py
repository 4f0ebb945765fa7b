"""Adam with decoupled weight decay."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .tensor import Parameter


@dataclass
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 5e-4

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")


def adam_step(params: Iterable[Parameter], hyper: AdamHyper, t: int):
    """One bias-corrected Adam update at step ``t`` (1-based); zeroes the grads."""
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    b1, b2 = hyper.beta1, hyper.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p in params:
        g = p.grad
        if hyper.weight_decay:
            p.data -= hyper.lr * hyper.weight_decay * p.data
        p.adam_m *= b1
        p.adam_m += (1.0 - b1) * g
        p.adam_v *= b2
        p.adam_v += (1.0 - b2) * g * g
        p.data -= hyper.lr * (p.adam_m / c1) / (np.sqrt(p.adam_v / c2) + hyper.eps)
        g[...] = 0.0
