"""Frame subsampling for training clips and evaluation."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, DataError


def sample_frames(t_total: int, t_target: int, rng: np.random.Generator | None = None,
                  mode: str = "train_random", stratified: bool = True) -> np.ndarray:
    """Pick frame indices covering [0, t_total).

    train_random draws one index per contiguous segment (jittered/stratified
    sampling), so the clip covers the whole video; empty segments repeat
    their boundary index, so short videos still yield exactly t_target
    indices. eval_all returns every frame. Output is sorted non-decreasing.
    """
    if t_total == 0:
        raise DataError("empty video")
    if mode == "eval_all":
        return np.arange(t_total)
    if mode != "train_random":
        raise ContractError(f"unknown sampling mode '{mode}'")
    if t_target < 1:
        raise ContractError("t_target must be >= 1")
    if rng is None:
        raise ContractError("train_random sampling needs an rng")
    if not stratified:
        idx = rng.choice(t_total, size=t_target, replace=t_total < t_target)
        return np.sort(idx)
    out = np.empty(t_target, dtype=np.int64)
    for i in range(t_target):
        lo = (i * t_total) // t_target
        hi = ((i + 1) * t_total) // t_target
        out[i] = rng.integers(lo, hi) if hi > lo else lo
    return out
