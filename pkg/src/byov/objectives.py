"""Mask-plan sampling and the self-view / cross-view reconstruction losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError
from .model import (
    LatentSequence,
    MaskPlan,
    ModelParams,
    build_mask_filled,
    decode_mcm,
    decode_msm,
    decode_packed,
    encode,
    encode_packed,
)
from .numerics.tensor import Tensor, add, backward, gather_rows, mse_loss


@dataclass
class Ratios:
    stm: float = 0.3
    msm: float = 0.4
    mcm: float = 0.8


@dataclass
class LossBreakdown:
    l_msm_ego: float = 0.0
    l_msm_exo: float = 0.0
    l_mcm_ego: float = 0.0
    l_mcm_exo: float = 0.0

    @property
    def l_total(self) -> float:
        return self.l_msm_ego + self.l_msm_exo + self.l_mcm_ego + self.l_mcm_exo

    def to_dict(self) -> dict:
        return {"l_msm_ego": self.l_msm_ego, "l_msm_exo": self.l_msm_exo,
                "l_mcm_ego": self.l_mcm_ego, "l_mcm_exo": self.l_mcm_exo,
                "l_total": self.l_total}


def mask_count(t: int, ratio: float) -> int:
    """clamp(round-half-up(ratio * T), 0, T)."""
    return int(min(t, max(0, np.floor(ratio * t + 0.5))))


def sample_mask_plan(t: int, ratio: float, rng: np.random.Generator) -> MaskPlan:
    """Uniform without-replacement draw of the masked frame set."""
    if t < 1:
        raise ContractError("mask plan needs T >= 1")
    if not 0.0 <= ratio <= 1.0:
        raise ContractError(f"mask ratio {ratio} outside [0, 1]")
    n_masked = mask_count(t, ratio)
    masked = np.sort(rng.choice(t, size=n_masked, replace=False))
    visible = np.setdiff1d(np.arange(t), masked)
    return MaskPlan(t=t, masked=masked, visible=visible, ratio=ratio)


def _reconstruction_loss(xbar: Tensor, y: Tensor, plan: MaskPlan,
                         masked_only: bool) -> Tensor:
    if masked_only:
        if len(plan.masked) == 0:
            raise ContractError("masked-only loss with an empty masked set")
        return mse_loss(gather_rows(xbar, plan.masked), gather_rows(y, plan.masked))
    return mse_loss(xbar, y)


def msm_loss(params: ModelParams, xbar: np.ndarray, plan: MaskPlan,
             causal: bool = True, masked_only: bool = False) -> Tensor:
    """Self-view loss: encode the visible subset, decode the full sequence
    causally, MSE against the full merged embedding sequence."""
    t = xbar.shape[0]
    if plan.t != t:
        raise ContractError(f"mask plan T={plan.t} != sequence T={t}")
    xbar_t = Tensor(np.asarray(xbar, dtype=params.dtype))
    z = None
    if len(plan.visible) > 0:
        z = encode(params, gather_rows(xbar_t, plan.visible), plan.visible)
    filled = build_mask_filled(params, z, plan, t)
    y = decode_msm(params, filled, causal=causal)
    return _reconstruction_loss(xbar_t, y, plan, masked_only)


def mcm_loss(params: ModelParams, xbar_own: np.ndarray, plan_own: MaskPlan,
             z_other_full: LatentSequence, masked_only: bool = False) -> Tensor:
    """Cross-view loss: encode the own visible subset, decode against the
    other view's full-sequence latents, MSE over the own view's frames."""
    t = xbar_own.shape[0]
    if plan_own.t != t:
        raise ContractError(f"mask plan T={plan_own.t} != sequence T={t}")
    xbar_t = Tensor(np.asarray(xbar_own, dtype=params.dtype))
    z = None
    if len(plan_own.visible) > 0:
        z = encode(params, gather_rows(xbar_t, plan_own.visible), plan_own.visible)
    filled = build_mask_filled(params, z, plan_own, t)
    y = decode_mcm(params, filled, z_other_full)
    return _reconstruction_loss(xbar_t, y, plan_own, masked_only)


def joint_losses_from_plans(params: ModelParams, ego_xbar: np.ndarray,
                            exo_xbar: np.ndarray,
                            msm_plans: Optional[tuple[MaskPlan, MaskPlan]],
                            mcm_plans: Optional[tuple[MaskPlan, MaskPlan]],
                            causal: bool = True, masked_only: bool = False,
                            do_backward: bool = True) -> LossBreakdown:
    """Compute the enabled loss terms for explicit mask plans.

    All sequences go through one encoder pass and one decoder pass (kept
    independent by block-diagonal attention), so the values and gradients
    match per-loss computation while the matrix work runs at the combined
    sequence length.
    """
    out = LossBreakdown()
    if msm_plans is None and mcm_plans is None:
        return out
    ego_t = Tensor(np.asarray(ego_xbar, dtype=params.dtype))
    exo_t = Tensor(np.asarray(exo_xbar, dtype=params.dtype))
    views = ((ego_t, ego_xbar.shape[0]), (exo_t, exo_xbar.shape[0]))

    # one encoder pass over every needed subsequence
    enc_jobs: list[tuple] = []
    slots: list[Optional[int]] = []  # parallel to the logical sequence list

    def submit(xbar_t: Tensor, idx: np.ndarray) -> Optional[int]:
        if len(idx) == 0:
            return None
        enc_jobs.append((gather_rows(xbar_t, idx) if len(idx) < xbar_t.data.shape[0]
                         else xbar_t, idx))
        return len(enc_jobs) - 1

    if msm_plans is not None:
        for (xbar_t, _), plan in zip(views, msm_plans):
            slots.append(submit(xbar_t, plan.visible))
    if mcm_plans is not None:
        for (xbar_t, _), plan in zip(views, mcm_plans):
            slots.append(submit(xbar_t, plan.visible))
        for xbar_t, t in views:
            slots.append(submit(xbar_t, np.arange(t)))
    latents = encode_packed(params, enc_jobs) if enc_jobs else []
    zs = [None if s is None else latents[s] for s in slots]

    # one decoder pass over every reconstruction job
    dec_jobs: list[tuple] = []
    targets: list[tuple[Tensor, MaskPlan]] = []
    cursor = 0
    if msm_plans is not None:
        for (xbar_t, t), plan in zip(views, msm_plans):
            filled = build_mask_filled(params, zs[cursor], plan, t)
            dec_jobs.append(("self", filled, causal))
            targets.append((xbar_t, plan))
            cursor += 1
    if mcm_plans is not None:
        z_full = {"ego": zs[cursor + 2], "exo": zs[cursor + 3]}
        for (xbar_t, t), plan, other in zip(views, mcm_plans, ("exo", "ego")):
            filled = build_mask_filled(params, zs[cursor], plan, t)
            dec_jobs.append(("cross", filled, z_full[other]))
            targets.append((xbar_t, plan))
            cursor += 1
    ys = decode_packed(params, dec_jobs)

    losses = [_reconstruction_loss(xbar_t, y, plan, masked_only)
              for (xbar_t, plan), y in zip(targets, ys)]
    if do_backward:
        total = losses[0]
        for term in losses[1:]:
            total = add(total, term)
        backward(total)
    values = iter(float(t.data) for t in losses)
    if msm_plans is not None:
        out.l_msm_ego, out.l_msm_exo = next(values), next(values)
    if mcm_plans is not None:
        out.l_mcm_ego, out.l_mcm_exo = next(values), next(values)
    return out


def joint_step_losses(params: ModelParams, ego_xbar: np.ndarray, exo_xbar: np.ndarray,
                      rng: np.random.Generator, ratios: Ratios,
                      enable_msm: bool = True, enable_mcm: bool = True,
                      causal: bool = True, masked_only: bool = False,
                      do_backward: bool = True) -> LossBreakdown:
    """Draw independent mask plans per view and objective, then compute (and
    by default backpropagate) the enabled loss terms."""
    msm_plans = mcm_plans = None
    if enable_msm:
        msm_plans = (sample_mask_plan(ego_xbar.shape[0], ratios.msm, rng),
                     sample_mask_plan(exo_xbar.shape[0], ratios.msm, rng))
    if enable_mcm:
        mcm_plans = (sample_mask_plan(ego_xbar.shape[0], ratios.mcm, rng),
                     sample_mask_plan(exo_xbar.shape[0], ratios.mcm, rng))
    return joint_losses_from_plans(params, ego_xbar, exo_xbar, msm_plans, mcm_plans,
                                   causal=causal, masked_only=masked_only,
                                   do_backward=do_backward)
