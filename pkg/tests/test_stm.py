"""Selective token merging: scoring, top-K selection, and the merge against
an independently written score-sort-slice-mean oracle."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from byov.errors import ContractError, ShapeError
from byov.stm import (
    mean_pool,
    merge_ratio_k,
    merge_selected,
    select_topk,
    token_change_scores,
)


def oracle_merge(tokens: np.ndarray, ratio: float) -> np.ndarray:
    """Independent reimplementation: score each token by mean |delta| to the
    next frame, sort by (-score, index), slice the first K, average."""
    t_total, n, d = tokens.shape
    k = max(1, int(np.floor(ratio * n + 0.5)))
    out = np.empty((t_total, d), dtype=tokens.dtype)
    for t in range(t_total):
        s = t if t < t_total - 1 else t_total - 2
        score = np.abs(tokens[s] - tokens[s + 1]).mean(axis=1)
        ranked = sorted(range(n), key=lambda i: (-score[i], i))
        chosen = sorted(ranked[:k])  # canonical index order for exact float equality
        out[t] = tokens[t, chosen, :].mean(axis=0)
    return out


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------


def test_scores_shape_and_values():
    tokens = np.zeros((4, 3, 2))
    tokens[1, 0] = [2.0, -2.0]  # token 0 changes by mean(|2|, |-2|) = 2 at pair (0,1)
    scores = token_change_scores(tokens)
    assert scores.shape == (3, 3)
    assert scores[0, 0] == 2.0
    assert scores[1, 0] == 2.0  # changes back
    assert scores[0, 1] == 0.0 and scores[2].sum() == 0.0


def test_scores_require_3d_and_two_frames():
    with pytest.raises(ShapeError):
        token_change_scores(np.zeros((4, 3)))
    with pytest.raises(ContractError):
        token_change_scores(np.zeros((1, 3, 2)))


def test_constant_shift_leaves_scores_unchanged():
    rng = np.random.default_rng(0)
    tokens = rng.normal(size=(5, 6, 4))
    shifted = tokens + 10.0
    np.testing.assert_allclose(token_change_scores(tokens),
                               token_change_scores(shifted), rtol=0, atol=1e-12)


# ---------------------------------------------------------------------------
# top-K selection and the K formula
# ---------------------------------------------------------------------------


def test_topk_ties_break_to_lower_index():
    row = np.array([1.0, 3.0, 3.0, 0.5])
    np.testing.assert_array_equal(select_topk(row, 1), [1])
    np.testing.assert_array_equal(select_topk(row, 2), [1, 2])
    np.testing.assert_array_equal(select_topk(row, 3), [0, 1, 2])


def test_topk_rejects_bad_k():
    row = np.arange(4.0)
    for k in (0, 5, -1):
        with pytest.raises(ContractError):
            select_topk(row, k)


@pytest.mark.parametrize("ratio,n,expected", [
    (0.3, 16, 5),    # 4.8 rounds up
    (0.3, 15, 5),    # 4.5 rounds half up
    (0.3, 14, 4),    # 4.2 rounds down
    (0.5, 1, 1),
    (0.01, 100, 1),
    (0.001, 100, 1),  # floor of 1
    (1.0, 7, 7),
])
def test_merge_ratio_k_round_half_up_with_floor(ratio, n, expected):
    assert merge_ratio_k(ratio, n) == expected


def test_merge_ratio_k_rejects_out_of_range():
    for ratio in (0.0, -0.1, 1.5):
        with pytest.raises(ContractError):
            merge_ratio_k(ratio, 8)


# ---------------------------------------------------------------------------
# merge_selected vs the oracle (acceptance criterion: exact on 1000 tensors)
# ---------------------------------------------------------------------------


def test_merge_matches_oracle_on_1000_random_tensors():
    rng = np.random.default_rng(123)
    for trial in range(1000):
        t_total = int(rng.integers(2, 9))
        n = int(rng.integers(1, 13))
        d = int(rng.integers(1, 7))
        ratio = float(rng.uniform(0.05, 1.0))
        tokens = rng.normal(size=(t_total, n, d))
        if trial % 7 == 0:  # inject exact score ties
            tokens[:, : n // 2 + 1, :] = tokens[:, 0:1, :]
        merged, sel = merge_selected(tokens, ratio)
        np.testing.assert_array_equal(merged, oracle_merge(tokens, ratio))
        assert sel.k == merge_ratio_k(ratio, n)
        assert sel.selected_indices.shape == (t_total, sel.k)


def test_last_frame_reuses_final_score_row():
    tokens = np.zeros((3, 2, 1))
    tokens[2, 1] = 5.0  # pair (1,2): token 1 changes most
    _, sel = merge_selected(tokens, 0.5)
    assert sel.k == 1
    np.testing.assert_array_equal(sel.selected_indices[1], sel.selected_indices[2])
    assert sel.selected_indices[2][0] == 1


def test_ratio_one_equals_mean_pool():
    rng = np.random.default_rng(1)
    tokens = rng.normal(size=(6, 5, 3))
    merged, sel = merge_selected(tokens, 1.0)
    assert sel.k == 5
    np.testing.assert_allclose(merged, mean_pool(tokens), rtol=0, atol=1e-12)


def test_mean_pool_shape_check():
    with pytest.raises(ShapeError):
        mean_pool(np.zeros((4, 3)))


# ---------------------------------------------------------------------------
# properties
# ---------------------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0))
def test_merge_output_is_convex_combination_rows(seed, ratio):
    """Each merged row is the mean of K token rows of that frame."""
    rng = np.random.default_rng(seed)
    tokens = rng.normal(size=(int(rng.integers(2, 7)),
                              int(rng.integers(1, 9)),
                              int(rng.integers(1, 5))))
    merged, sel = merge_selected(tokens, ratio)
    for t in range(tokens.shape[0]):
        rows = sel.selected_indices[t]
        assert len(set(rows.tolist())) == sel.k  # no duplicates
        np.testing.assert_allclose(merged[t], tokens[t, rows, :].mean(axis=0),
                                   rtol=0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_token_permutation_equivariance(seed):
    """Permuting tokens permutes the selection but not the merged values."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 8))
    tokens = rng.normal(size=(4, n, 3))
    # perturb so scores are distinct (ties would legitimately change the
    # lower-index winner under permutation)
    tokens += rng.normal(scale=1e-3, size=tokens.shape)
    perm = rng.permutation(n)
    merged_a, _ = merge_selected(tokens, 0.5)
    merged_b, _ = merge_selected(tokens[:, perm, :], 0.5)
    np.testing.assert_allclose(merged_a, merged_b, rtol=0, atol=1e-12)
