"""Dense-tensor substrate with reverse-mode automatic differentiation.

Tensors wrap numpy arrays (float32 by default, float64 for gradient
checking) and record a computation graph at operation granularity, so a
transformer forward pass stays at a few dozen graph nodes per block.
Backward accumulates into ``.grad`` rather than overwriting, which makes
separate backward passes over several losses equivalent to one pass over
their sum.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ContractError, DegenerateAttentionError, NumericError, ShapeError

NEG_INF = -np.inf

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation paths)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray, own: bool = False):
        """Add g into .grad; own=True promises g is freshly allocated and
        not shared, so the first contribution can take it without a copy."""
        if self.grad is None:
            self.grad = g if own else g.copy()
        else:
            self.grad += g

    def item(self) -> float:
        return float(self.data)

    def assert_finite(self, what: str = "tensor"):
        if not np.all(np.isfinite(self.data)):
            raise NumericError(f"non-finite values in {what}")

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _tracked(*parents: Tensor) -> bool:
    return _GRAD_ENABLED and any(p.requires_grad or p._parents for p in parents)


def _needs(t: Tensor) -> bool:
    """Whether a gradient flowing into t would reach any leaf."""
    return t.requires_grad or bool(t._parents)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _tracked(*parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def constant(data, dtype=None) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype))


# ---------------------------------------------------------------------------
# elementwise / arithmetic
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        if _needs(a):
            ga = _unbroadcast(g, a.data.shape)
            a.accumulate_grad(ga, own=ga is not g)
        if _needs(b):
            gb = _unbroadcast(g, b.data.shape)
            b.accumulate_grad(gb, own=gb is not g)

    return _make(data, (a, b), backward)


def add_const(a: Tensor, c) -> Tensor:
    data = a.data + c

    def backward(g):
        a.accumulate_grad(_unbroadcast(g, a.data.shape))

    return _make(data, (a,), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backward(g):
        if _needs(a):
            ga = _unbroadcast(g, a.data.shape)
            a.accumulate_grad(ga, own=ga is not g)
        if _needs(b):
            b.accumulate_grad(_unbroadcast(-g, b.data.shape), own=True)

    return _make(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data
    ad, bd = a.data, b.data

    def backward(g):
        if _needs(a):
            a.accumulate_grad(_unbroadcast(g * bd, ad.shape), own=True)
        if _needs(b):
            b.accumulate_grad(_unbroadcast(g * ad, bd.shape), own=True)

    return _make(data, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    data = a.data * s

    def backward(g):
        a.accumulate_grad(g * s, own=True)

    return _make(data, (a,), backward)


def tsum(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def backward(g):
        a.accumulate_grad(np.full_like(a.data, g), own=True)

    return _make(data, (a,), backward)


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation.

    gelu(x) = 0.5 x (1 + tanh(c (x + 0.044715 x^3))), c = sqrt(2/pi).
    """
    c = a.data.dtype.type(math.sqrt(2.0 / math.pi))
    alpha = a.data.dtype.type(0.044715)
    x = a.data
    u = c * (x + alpha * x * x * x)
    t = np.tanh(u)
    data = 0.5 * x * (1.0 + t)

    def backward(g):
        du = c * (1.0 + 3.0 * alpha * x * x)
        grad = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
        grad *= g
        a.accumulate_grad(grad, own=True)

    return _make(data, (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.data.shape} vs {b.data.shape}")
    data = a.data @ b.data
    ad, bd = a.data, b.data

    def backward(g):
        if _needs(a):
            a.accumulate_grad(g @ bd.T, own=True)
        if _needs(b):
            b.accumulate_grad(ad.T @ g, own=True)

    return _make(data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    data = a.data.T

    def backward(g):
        a.accumulate_grad(g.T)

    return _make(data, (a,), backward)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with b broadcast over rows."""
    return add(matmul(x, w), b)


# ---------------------------------------------------------------------------
# normalization / attention / losses
# ---------------------------------------------------------------------------


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize over the last axis, then apply the affine (gamma, beta)."""
    if eps <= 0:
        raise ContractError("layer_norm requires eps > 0")
    d = x.data.shape[-1] if x.data.ndim else 0
    if d == 0:
        raise ShapeError("layer_norm over an empty last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = xc * inv
    data = xhat * gamma.data + beta.data

    def backward(g):
        gg = g * gamma.data
        gx = (gg - gg.mean(axis=-1, keepdims=True)
              - xhat * (gg * xhat).mean(axis=-1, keepdims=True)) * inv
        x.accumulate_grad(gx, own=True)
        red = tuple(range(g.ndim - 1))
        gamma.accumulate_grad((g * xhat).sum(axis=red), own=True)
        beta.accumulate_grad(g.sum(axis=red), own=True)

    return _make(data, (x, gamma, beta), backward)


def masked_softmax(scores: Tensor, additive_mask: Optional[np.ndarray]) -> Tensor:
    """Row-wise softmax of scores + additive_mask.

    Mask entries are 0 (allowed) or -inf (blocked); blocked entries get
    exactly zero weight. A fully blocked row is an error.
    """
    s = scores.data
    if additive_mask is not None:
        if additive_mask.shape != s.shape:
            raise ShapeError(f"mask shape {additive_mask.shape} != scores shape {s.shape}")
        if np.any(np.all(np.isneginf(additive_mask), axis=-1)):
            raise DegenerateAttentionError("attention row with no allowed keys")
        s = s + additive_mask
    m = s.max(axis=-1, keepdims=True)
    e = np.exp(s - m)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        scores.accumulate_grad(p * (g - dot), own=True)

    return _make(p, (scores,), backward)


def masked_attention(q: Tensor, k: Tensor, v: Tensor,
                     additive_mask: Optional[np.ndarray] = None) -> Tensor:
    """softmax(q k^T / sqrt(d) + mask) v over one attention head."""
    d = q.data.shape[-1]
    scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(d))
    attn = masked_softmax(scores, additive_mask)
    return matmul(attn, v)


def mse_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean of squared differences over every element."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mse_loss shape mismatch: {a.data.shape} vs {b.data.shape}")
    if a.data.size == 0:
        raise ShapeError("mse_loss over an empty tensor")
    diff = a.data - b.data
    n = a.data.size
    data = np.asarray((diff * diff).sum() / n, dtype=a.data.dtype)

    def backward(g):
        gd = g * (2.0 / n) * diff
        if _needs(a):
            a.accumulate_grad(gd, own=True)
        if _needs(b):
            b.accumulate_grad(-gd, own=True)

    return _make(data, (a, b), backward)


# ---------------------------------------------------------------------------
# indexing / assembly
# ---------------------------------------------------------------------------


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)
    data = x.data[idx]

    def backward(g):
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        np.add.at(x.grad, idx, g)

    return _make(data, (x,), backward)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    data = np.concatenate([p.data for p in parts], axis=0)
    sizes = [p.data.shape[0] for p in parts]

    def backward(g):
        off = 0
        for p, n in zip(parts, sizes):
            p.accumulate_grad(g[off:off + n])
            off += n

    return _make(data, tuple(parts), backward)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    data = x.data[:, start:stop]

    def backward(g):
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        x.grad[:, start:stop] += g

    return _make(data, (x,), backward)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    data = np.concatenate([p.data for p in parts], axis=1)
    sizes = [p.data.shape[1] for p in parts]

    def backward(g):
        off = 0
        for p, n in zip(parts, sizes):
            p.accumulate_grad(g[:, off:off + n])
            off += n

    return _make(data, tuple(parts), backward)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    data = x.data[start:stop]

    def backward(g):
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        x.grad[start:stop] += g

    return _make(data, (x,), backward)


def row_scatter(z_visible: Optional[Tensor], fill_token: Tensor,
                visible_idx: np.ndarray, masked_idx: np.ndarray, total: int) -> Tensor:
    """Assemble a (total, d) sequence: visible rows from z_visible (in order),
    every masked row a copy of fill_token."""
    visible_idx = np.asarray(visible_idx, dtype=np.intp)
    masked_idx = np.asarray(masked_idx, dtype=np.intp)
    d = fill_token.data.shape[-1]
    if z_visible is not None and z_visible.data.shape[0] != len(visible_idx):
        raise ContractError("visible latents do not align with the mask plan")
    if z_visible is None and len(visible_idx) != 0:
        raise ContractError("visible indices given without visible latents")
    data = np.empty((total, d), dtype=fill_token.data.dtype)
    if z_visible is not None:
        data[visible_idx] = z_visible.data
    data[masked_idx] = fill_token.data

    parents = (fill_token,) if z_visible is None else (z_visible, fill_token)

    def backward(g):
        if z_visible is not None:
            z_visible.accumulate_grad(g[visible_idx], own=True)
        fill_token.accumulate_grad(g[masked_idx].sum(axis=0).reshape(fill_token.data.shape),
                                   own=True)

    return _make(data, parents, backward)


# ---------------------------------------------------------------------------
# backward driver
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss; grads accumulate into leaves."""
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")

    # iterative post-order topological sort
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            # intermediate grads are not needed after their backward ran
            if not node.requires_grad and node is not loss:
                node.grad = None
