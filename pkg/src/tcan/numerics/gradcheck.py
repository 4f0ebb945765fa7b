"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor, backward, clear_tape, no_grad


def rel_error(a, n) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def grad_check(f: Callable[[], Tensor], params: Sequence[Parameter], eps: float = 1e-5,
               max_coords: int | None = None, rng: np.random.Generator | None = None,
               per_param: bool = False, stencil: int = 2):
    """Compare backprop gradients of the scalar ``f()`` against central differences.

    ``f`` must be deterministic.  With ``max_coords`` only that many randomly
    chosen coordinates of each parameter are perturbed.  Returns the maximum
    relative error, or a ``{name: error}`` dict with ``per_param``.

    ``stencil=2`` is the plain central difference ``(f(x+e) - f(x-e)) / 2e``;
    ``stencil=4`` the five-point central formula, whose O(e**4) truncation
    error allows a larger ``eps`` and so a lower roundoff floor (about
    ``ulp(f) / eps``) for coordinates with very small gradients.
    """
    if stencil not in (2, 4):
        raise ValueError("stencil must be 2 or 4")
    for p in params:
        p.zero_grad()
    clear_tape()
    backward(f())
    analytic = [p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()
    rng = rng or np.random.default_rng(0)

    errs = {}
    with no_grad():
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
            worst = 0.0
            for i in coords:
                orig = flat[i]

                def at(delta):
                    flat[i] = orig + delta
                    return f().item()

                if stencil == 2:
                    num = (at(eps) - at(-eps)) / (2 * eps)
                else:
                    num = (8 * (at(eps) - at(-eps)) - (at(2 * eps) - at(-2 * eps))) / (12 * eps)
                flat[i] = orig
                worst = max(worst, float(rel_error(ga.reshape(-1)[i], num)))
            errs[p.name or f"param{len(errs)}"] = worst
    if per_param:
        return errs
    return max(errs.values(), default=0.0)
