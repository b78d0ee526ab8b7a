"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError
from .tensor import Tensor, backward


def finite_diff_check(loss_fn: Callable[[], Tensor],
                      named_params: Sequence[tuple[str, Tensor]],
                      h: float = 1e-5,
                      rng: np.random.Generator | None = None,
                      max_coords_per_param: int = 32) -> float:
    """Compare analytic grads of loss_fn against central differences.

    loss_fn must be deterministic and read the given params. Checks a random
    subsample of coordinates per parameter; returns the maximum relative
    error with denominator max(|analytic|, |numeric|, 1e-8). Parameters must
    be float64.
    """
    if not (1e-6 <= h <= 1e-4):
        raise ContractError(f"finite_diff_check: h={h} outside [1e-6, 1e-4]")
    params = [p for _, p in named_params]
    for name, p in named_params:
        if p.data.dtype != np.float64:
            raise ContractError(f"finite_diff_check requires float64 parameters ({name})")
    rng = rng or np.random.default_rng(0)

    for p in params:
        p.grad = None
    loss = loss_fn()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    max_rel = 0.0
    for p, a in zip(params, analytic):
        n = p.data.size
        k = min(max_coords_per_param, n)
        coords = rng.choice(n, size=k, replace=False) if k < n else np.arange(n)
        flat = p.data.reshape(-1)
        aflat = a.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(loss_fn().data)
            flat[i] = orig - h
            f_minus = float(loss_fn().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            denom = max(abs(aflat[i]), abs(numeric), 1e-8)
            max_rel = max(max_rel, abs(aflat[i] - numeric) / denom)
    return max_rel
