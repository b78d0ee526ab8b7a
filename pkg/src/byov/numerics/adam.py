"""Adam optimizer with bias correction over named parameter lists."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError
from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def ensure(self, name: str, param: Tensor):
        if name not in self.m:
            self.m[name] = np.zeros_like(param.data)
            self.v[name] = np.zeros_like(param.data)


def adam_step(named_params: list[tuple[str, Tensor]], state: AdamState) -> None:
    """One Adam update over all parameters; grads are zeroed afterwards."""
    for name, p in named_params:
        if p.grad is None:
            raise ContractError(f"adam_step: parameter '{name}' has no gradient")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    # equivalent to p -= lr * (m/bc1) / (sqrt(v/bc2) + eps), with the bias
    # corrections folded into scalars so the loop runs in place with one
    # scratch array per parameter
    lr_hat = state.lr * np.sqrt(bc2) / bc1
    eps_hat = state.eps * np.sqrt(bc2)
    for name, p in named_params:
        state.ensure(name, p)
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        tmp = g * g
        v *= state.beta2
        tmp *= 1.0 - state.beta2
        v += tmp
        m *= state.beta1
        g *= 1.0 - state.beta1  # grads are consumed here and zeroed below
        m += g
        np.sqrt(v, out=tmp)
        tmp += eps_hat
        np.divide(m, tmp, out=tmp)
        tmp *= lr_hat
        p.data -= tmp
        p.grad = None
