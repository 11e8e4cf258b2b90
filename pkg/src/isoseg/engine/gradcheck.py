"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Max of ``|a - n| / max(|a|, |n|, floor)``; ``floor`` keeps exact zeros from amplifying roundoff."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def finite_difference_check(fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-4,
                            max_entries: int | None = None,
                            rng: np.random.Generator | None = None, floor: float = 1e-8) -> float:
    """Max relative error between backprop and central differences.

    ``fn`` rebuilds the scalar graph from the current values of ``params``
    each call. Points where the function is not differentiable (relu at 0)
    must be avoided by the caller. ``max_entries`` limits how many scalars
    per parameter are probed (randomly chosen with ``rng``).
    """
    for p in params:
        p.grad = None
        p.requires_grad = True
    loss = fn()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            rng = rng or np.random.default_rng(0)
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        numeric = np.empty(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn().item()
            flat[i] = orig - h
            fm = fn().item()
            flat[i] = orig
            numeric[j] = (fp - fm) / (2 * h)
        worst = max(worst, relative_error(ga.reshape(-1)[idx], numeric, floor))
    return worst
