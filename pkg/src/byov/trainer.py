"""Training loop over unpaired two-view videos: pair sampling, joint masked
reconstruction losses, Adam updates, checkpointing, and the ablation runner."""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .data.manifest import Dataset, VideoRecord, load_manifest, load_token_embeddings
from .data.sampling import sample_frames
from .errors import ContractError, DataError, NumericError, ValidationError
from .model import ArchConfig, ModelParams, load_checkpoint, save_checkpoint
from .numerics.adam import AdamState, adam_step
from .objectives import LossBreakdown, Ratios, joint_step_losses
from .stm import mean_pool, merge_selected


@dataclass
class Flags:
    enable_msm: bool = True
    enable_mcm: bool = True
    enable_causal: bool = True
    enable_stm: bool = True


@dataclass
class OptimConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainConfig:
    manifest: str = ""
    out_dir: str = "runs/default"
    seed: int = 0
    steps: int = 2000
    batch_pairs: int = 1
    frames_per_clip: int = 32
    checkpoint_every: int = 500
    masked_loss_only: bool = False
    stratified_sampling: bool = True
    class_first_pair_sampling: bool = True
    ratios: Ratios = field(default_factory=Ratios)
    optimizer: OptimConfig = field(default_factory=OptimConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    flags: Flags = field(default_factory=Flags)

    def validate(self):
        if self.steps <= 0:
            raise ValidationError("steps must be > 0")
        if self.batch_pairs <= 0 or self.frames_per_clip <= 0:
            raise ValidationError("batch_pairs and frames_per_clip must be > 0")
        for name, value in (("stm", self.ratios.stm), ("msm", self.ratios.msm),
                            ("mcm", self.ratios.mcm)):
            lo = 0.0 if name != "stm" else 1e-9
            if not lo <= value <= 1.0:
                raise ValidationError(f"ratio {name}={value} out of range")


def sample_training_pair(train_records: list[VideoRecord], rng: np.random.Generator,
                         class_first: bool = True) -> tuple[VideoRecord, VideoRecord]:
    """Uniformly pick an action class present in both views, then one ego and
    one exo video of that class, independently."""
    by_class: dict[str, dict[str, list[VideoRecord]]] = {}
    for r in train_records:
        by_class.setdefault(r.action_class, {"ego": [], "exo": []})[r.view].append(r)
    eligible = sorted(c for c, views in by_class.items()
                      if views["ego"] and views["exo"])
    if not eligible:
        raise DataError("no action class has both ego and exo training videos")
    if class_first:
        cls = eligible[rng.integers(len(eligible))]
        ego = by_class[cls]["ego"]
        exo = by_class[cls]["exo"]
        return ego[rng.integers(len(ego))], exo[rng.integers(len(exo))]
    egos = [r for r in train_records if r.view == "ego" and r.action_class in eligible]
    ego = egos[rng.integers(len(egos))]
    exo = by_class[ego.action_class]["exo"]
    return ego, exo[rng.integers(len(exo))]


def clip_embeddings(record: VideoRecord, tokens: np.ndarray, config: TrainConfig,
                    rng: np.random.Generator) -> np.ndarray:
    """Sample a training clip and merge its tokens into frame embeddings."""
    idx = sample_frames(record.num_frames, config.frames_per_clip, rng,
                        mode="train_random", stratified=config.stratified_sampling)
    clip = tokens[idx]
    if config.flags.enable_stm:
        merged, _ = merge_selected(clip, config.ratios.stm)
        return merged
    return mean_pool(clip)


def train_step(params: ModelParams, opt: AdamState,
               pairs: list[tuple[VideoRecord, np.ndarray, VideoRecord, np.ndarray]],
               config: TrainConfig, rng: np.random.Generator) -> LossBreakdown:
    """One optimizer step over a batch of ego/exo pairs; returns the mean
    losses measured before the parameter update."""
    if not pairs:
        raise ContractError("train_step needs at least one pair")
    total = LossBreakdown()
    for ego_rec, ego_tokens, exo_rec, exo_tokens in pairs:
        ego_xbar = clip_embeddings(ego_rec, ego_tokens, config, rng)
        exo_xbar = clip_embeddings(exo_rec, exo_tokens, config, rng)
        bd = joint_step_losses(
            params, ego_xbar, exo_xbar, rng, config.ratios,
            enable_msm=config.flags.enable_msm, enable_mcm=config.flags.enable_mcm,
            causal=config.flags.enable_causal, masked_only=config.masked_loss_only)
        total.l_msm_ego += bd.l_msm_ego / len(pairs)
        total.l_msm_exo += bd.l_msm_exo / len(pairs)
        total.l_mcm_ego += bd.l_mcm_ego / len(pairs)
        total.l_mcm_exo += bd.l_mcm_exo / len(pairs)
    if not np.isfinite(total.l_total):
        raise NumericError(f"non-finite loss: {total.to_dict()}")
    # parameters untouched by the enabled losses still take a (zero-gradient)
    # Adam update so disabled-objective runs stay well-defined
    for _, p in params.named_params():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
    adam_step(params.named_params(), opt)
    return total


class EmbeddingCache:
    """In-memory token tensors keyed by video_id."""

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self._cache: dict[str, np.ndarray] = {}

    def get(self, record: VideoRecord) -> np.ndarray:
        if record.video_id not in self._cache:
            self._cache[record.video_id] = load_token_embeddings(self.dataset, record)
        return self._cache[record.video_id]


def train(config: TrainConfig, resume_from: Optional[str] = None,
          log_timing: bool = True) -> tuple[ModelParams, str, list[dict]]:
    """Run the optimization loop; returns (params, final checkpoint path, log).

    The TrainLog is also appended as JSON lines to <out_dir>/trainlog.jsonl.
    Checkpoints capture parameters, Adam state, and the RNG state, so a
    resumed run reproduces the unbroken run exactly.
    """
    config.validate()
    dataset = load_manifest(config.manifest)
    if config.arch.d != dataset.meta.d:
        raise ValidationError(f"architecture d={config.arch.d} != dataset d={dataset.meta.d}")
    train_records = dataset.split("train")
    if not train_records:
        raise DataError("train split is empty")
    cache = EmbeddingCache(dataset)

    os.makedirs(config.out_dir, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    if resume_from is not None:
        params, start_step, rng_state, opt = load_checkpoint(resume_from)
        if rng_state is None or opt is None:
            raise ContractError(f"{resume_from} lacks optimizer/rng state, cannot resume")
        rng.bit_generator.state = rng_state
    else:
        params = ModelParams(config.arch, rng)
        opt = AdamState(lr=config.optimizer.lr, beta1=config.optimizer.beta1,
                        beta2=config.optimizer.beta2, eps=config.optimizer.eps)
        start_step = 0
    if config.steps <= start_step:
        raise ValidationError(f"steps={config.steps} <= resume step {start_step}")

    log: list[dict] = []
    log_path = os.path.join(config.out_dir, "trainlog.jsonl")
    ckpt_path = os.path.join(config.out_dir, "checkpoint.byvc")
    with open(log_path, "a") as log_file:
        for step in range(start_step + 1, config.steps + 1):
            t0 = time.perf_counter()
            pairs = []
            for _ in range(config.batch_pairs):
                ego_rec, exo_rec = sample_training_pair(
                    train_records, rng, class_first=config.class_first_pair_sampling)
                pairs.append((ego_rec, cache.get(ego_rec), exo_rec, cache.get(exo_rec)))
            bd = train_step(params, opt, pairs, config, rng)
            entry = {"step": step, **bd.to_dict(),
                     "ms": (time.perf_counter() - t0) * 1000.0 if log_timing else 0.0}
            log.append(entry)
            log_file.write(json.dumps(entry) + "\n")
            if step % config.checkpoint_every == 0 or step == config.steps:
                params.assert_finite()
                save_checkpoint(ckpt_path, params, step=step,
                                rng_state=rng.bit_generator.state, opt=opt)
    return params, ckpt_path, log


# ---------------------------------------------------------------------------
# ablation runner
# ---------------------------------------------------------------------------

ABLATION_VARIANTS = {
    "full": {},
    "-stm": {"enable_stm": False},
    "-causal": {"enable_causal": False},
    "-msm": {"enable_msm": False},
    "-mcm": {"enable_mcm": False},
}


def run_ablation_suite(base_config: TrainConfig,
                       variants: Optional[list[str]] = None,
                       ratio_sweep: Optional[list[tuple[float, float, float]]] = None,
                       eval_map_ks: tuple[int, ...] = (5, 10, 15)) -> dict:
    """Train flag variants (and optional STM/MSM/MCM ratio sweeps) with a
    shared seed and dataset, evaluate each, and return a comparison report."""
    from .evaluation import eval_all  # deferred: evaluation imports model only

    rows = []
    jobs: list[tuple[str, TrainConfig]] = []
    for name in (variants if variants is not None else list(ABLATION_VARIANTS)):
        if name not in ABLATION_VARIANTS:
            raise ValidationError(f"unknown ablation variant '{name}'")
        flags = replace(base_config.flags, **ABLATION_VARIANTS[name])
        cfg = replace(base_config, flags=flags,
                      out_dir=os.path.join(base_config.out_dir, name.replace("-", "no_") or name))
        jobs.append((name, cfg))
    for stm, msm, mcm in (ratio_sweep or []):
        name = f"ratios_{stm:g}_{msm:g}_{mcm:g}"
        cfg = replace(base_config, ratios=Ratios(stm=stm, msm=msm, mcm=mcm),
                      out_dir=os.path.join(base_config.out_dir, name))
        jobs.append((name, cfg))

    for name, cfg in jobs:
        try:
            params, ckpt, _ = train(cfg)
            report = eval_all(params, load_manifest(cfg.manifest),
                              stm_ratio=cfg.ratios.stm if cfg.flags.enable_stm else None,
                              map_ks=eval_map_ks)
            rows.append({"variant": name, "status": "ok", "flags": asdict(cfg.flags),
                         "ratios": asdict(cfg.ratios), "checkpoint": ckpt,
                         "metrics": report})
        except Exception as e:  # partial-failure policy: report and continue
            rows.append({"variant": name, "status": f"failed: {e}",
                         "flags": asdict(cfg.flags), "ratios": asdict(cfg.ratios),
                         "metrics": None})
    return {"base_config": asdict(base_config), "variants": rows}
