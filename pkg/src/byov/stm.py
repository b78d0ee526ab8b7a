"""Selective token merging.

Tokens are scored by the mean absolute change of their embedding between
consecutive frames; the top-K per frame are averaged into a single frame
embedding. The last frame has no successor, so it reuses the score row of
the final consecutive pair (frames T-2, T-1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError


@dataclass
class SelectionResult:
    scores: np.ndarray            # (T-1, N)
    selected_indices: np.ndarray  # (T, K), each row sorted ascending
    k: int
    ratio: float


def token_change_scores(tokens: np.ndarray) -> np.ndarray:
    """Per-token mean absolute channel change between consecutive frames."""
    if tokens.ndim != 3:
        raise ShapeError(f"expected T x N x d tokens, got shape {tokens.shape}")
    if tokens.shape[0] < 2:
        raise ContractError("token change scores need at least two frames")
    return np.abs(tokens[:-1] - tokens[1:]).mean(axis=2)


def select_topk(scores_row: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest scores, ties broken by lower index first."""
    n = len(scores_row)
    if not 1 <= k <= n:
        raise ContractError(f"k={k} outside [1, {n}]")
    # stable sort on (-score, index) keeps the lower index on ties
    order = np.argsort(-scores_row, kind="stable")
    return np.sort(order[:k])


def merge_ratio_k(ratio: float, n: int) -> int:
    """K = max(1, round-half-up(ratio * N))."""
    if not 0.0 < ratio <= 1.0:
        raise ContractError(f"token selection ratio {ratio} outside (0, 1]")
    return max(1, int(np.floor(ratio * n + 0.5)))


def merge_selected(tokens: np.ndarray, ratio: float) -> tuple[np.ndarray, SelectionResult]:
    """Average the top-K changing tokens of each frame into one embedding.

    Frame t < T-1 selects on the score row for pair (t, t+1); frame T-1
    reuses the final score row. Returns (T x d merged embeddings, selection).
    """
    scores = token_change_scores(tokens)
    t_total, n, _ = tokens.shape
    k = merge_ratio_k(ratio, n)
    selected = np.empty((t_total, k), dtype=np.int64)
    for t in range(t_total):
        selected[t] = select_topk(scores[min(t, t_total - 2)], k)
    merged = np.stack([tokens[t, selected[t], :].mean(axis=0) for t in range(t_total)])
    return merged, SelectionResult(scores=scores, selected_indices=selected, k=k, ratio=ratio)


def mean_pool(tokens: np.ndarray) -> np.ndarray:
    """Plain token-mean pooling, used when token selection is disabled."""
    if tokens.ndim != 3:
        raise ShapeError(f"expected T x N x d tokens, got shape {tokens.shape}")
    return tokens.mean(axis=1)
