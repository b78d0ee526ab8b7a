"""Synthetic unpaired ego/exo dataset generator.

Each action class owns a smooth latent trajectory a(p) over phase progress
p in [0,1], built from three parts: per-phase plateau directions shared by
all classes (coarse categorical content — what the action looks like during
each phase), a progress arc shared by all classes (a half-turn rotation in a
fixed 2-D latent plane, so angular distance encodes |p - q|), and
class-specific sinusoidal harmonics. A video draws random per-phase
durations, walks p monotonically from 0 to 1, and renders N token embeddings
per frame: a fixed random subset of ceil(N/4) "action" tokens carries a(p)
through a per-view affine map, the rest is static per-video clutter.
Per-video drift (random walk) and white noise are added on top. Ego and exo
videos are generated independently with different lengths and durations, so
the two views share only the underlying trajectory.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from .container import write_embeddings
from .manifest import Dataset, DatasetMeta, VideoRecord, save_manifest


@dataclass
class SynthConfig:
    num_videos_per_view: int = 40
    frames_range: tuple[int, int] = (24, 40)
    num_phases: int = 3
    num_classes: int = 2
    d_latent_true: int = 6
    n_tokens: int = 16
    d: int = 32
    harmonics: int = 8
    plateau_amplitude: float = 2.0
    arc_amplitude: float = 1.2
    harmonic_amplitude: float = 0.5
    view_noise_sigma: float = 0.05
    drift_sigma: float = 0.01
    clutter_sigma: float = 2.5
    seed: int = 0

    def validate(self):
        if self.num_videos_per_view <= 0 or self.d_latent_true <= 0 \
                or self.n_tokens <= 0 or self.d <= 0 or self.num_classes <= 0:
            raise ValidationError("synth: all counts must be positive")
        if self.harmonics <= 0:
            raise ValidationError("synth: harmonics must be positive")
        if self.num_phases < 2:
            raise ValidationError("synth: num_phases must be >= 2")
        if self.d_latent_true < self.num_phases:
            raise ValidationError("synth: d_latent_true must be >= num_phases "
                                  "(one latent direction per phase)")
        lo, hi = self.frames_range
        if lo < self.num_phases or hi < lo:
            raise ValidationError("synth: frames_range must satisfy num_phases <= min <= max")
        if min(self.view_noise_sigma, self.drift_sigma, self.clutter_sigma,
               self.arc_amplitude, self.plateau_amplitude,
               self.harmonic_amplitude) < 0:
            raise ValidationError("synth: sigmas and amplitudes must be >= 0")


@dataclass
class ProgressArc:
    """Shared progress component: a half-turn rotation in a fixed 2-D latent
    plane. Angle grows linearly with progress p, so the angular distance
    between two frames directly encodes |p - q| — an injective curve with a
    wide margin under cosine similarity (a straight drift would put all
    phases on one ray, where cosine barely separates them)."""
    u: np.ndarray  # (d_latent,) first plane axis, unit norm
    v: np.ndarray  # (d_latent,) second plane axis, unit norm, u ⊥ v
    amplitude: float

    @classmethod
    def random(cls, d_latent: int, rng: np.random.Generator,
               amplitude: float) -> "ProgressArc":
        u = rng.normal(size=d_latent)
        u /= np.linalg.norm(u) + 1e-12
        v = rng.normal(size=d_latent)
        v -= (v @ u) * u
        v /= np.linalg.norm(v) + 1e-12
        return cls(u=u, v=v, amplitude=amplitude)

    def __call__(self, p: np.ndarray) -> np.ndarray:
        ang = math.pi * p
        return self.amplitude * (np.cos(ang)[:, None] * self.u[None, :]
                                 + np.sin(ang)[:, None] * self.v[None, :])


@dataclass
class PhasePlateaus:
    """Shared per-phase content: each phase k holds a distinct latent
    direction, blended through smooth logistic edges at the phase boundaries
    k/P. Phases are categorically distinct chunks of content (like "reach",
    "pour", "place"), which is what makes them recognizable from either
    view."""
    directions: np.ndarray  # (P, d_latent), orthonormal rows scaled by amplitude
    width: float = 0.04

    @classmethod
    def random(cls, d_latent: int, num_phases: int, rng: np.random.Generator,
               amplitude: float) -> "PhasePlateaus":
        q = np.linalg.qr(rng.normal(size=(d_latent, num_phases)))[0]
        return cls(directions=q.T * amplitude)

    def __call__(self, p: np.ndarray) -> np.ndarray:
        num_phases = self.directions.shape[0]
        edges = np.arange(num_phases + 1) / num_phases
        lo = 1.0 / (1.0 + np.exp(-(p[:, None] - edges[None, :-1]) / self.width))
        hi = 1.0 / (1.0 + np.exp(-(p[:, None] - edges[None, 1:]) / self.width))
        return (lo - hi) @ self.directions


@dataclass
class ActionTrajectory:
    """Smooth class-specific latent curve a(p), p in [0, 1]: shared phase
    plateaus (coarse, categorical) + the shared progress arc (fine, ordinal)
    + random sinusoidal harmonics (class-specific shape)."""
    plateaus: PhasePlateaus
    arc: ProgressArc
    coefs: np.ndarray   # (d_latent, H)
    phases: np.ndarray  # (d_latent, H)

    @classmethod
    def random(cls, d_latent: int, rng: np.random.Generator,
               plateaus: PhasePlateaus, arc: ProgressArc, harmonics: int = 8,
               harmonic_amplitude: float = 0.5) -> "ActionTrajectory":
        coefs = rng.normal(0.0, 1.0, size=(d_latent, harmonics))
        coefs /= np.sqrt((coefs ** 2).sum(axis=1, keepdims=True)) + 1e-12
        # 1/h amplitude decay: a red spectrum keeps the curve locally smooth
        # and keeps distant phases from accidentally looking alike
        coefs *= harmonic_amplitude / np.arange(1, harmonics + 1)[None, :]
        phases = rng.uniform(0.0, 2.0 * math.pi, size=(d_latent, harmonics))
        return cls(plateaus=plateaus, arc=arc, coefs=coefs, phases=phases)

    def __call__(self, p: np.ndarray) -> np.ndarray:
        h = np.arange(1, self.coefs.shape[1] + 1)
        # (len(p), d_latent, H) phase argument
        arg = math.pi * h[None, None, :] * p[:, None, None] + self.phases[None, :, :]
        osc = (self.coefs[None, :, :] * np.sin(arg)).sum(axis=2)
        return osc + self.plateaus(p) + self.arc(p)


@dataclass
class ViewMap:
    """Fixed affine map from the true latent space into token-embedding space."""
    w: np.ndarray  # (d, d_latent)
    b: np.ndarray  # (d,)

    @classmethod
    def random(cls, d: int, d_latent: int, rng: np.random.Generator) -> "ViewMap":
        w = rng.normal(0.0, 1.0 / math.sqrt(d_latent), size=(d, d_latent))
        b = rng.normal(0.0, 0.1, size=d)
        return cls(w=w, b=b)

    def __call__(self, latents: np.ndarray) -> np.ndarray:
        return latents @ self.w.T + self.b


def phase_schedule(t_total: int, num_phases: int, rng: np.random.Generator):
    """Random per-phase durations (each >= 1 frame) for a t_total-frame video.

    Returns (phase_labels, key_event_frames, progress) where progress is the
    monotone p(t) in [0, 1]: phase k spans [k/P, (k+1)/P) in p-space.
    """
    weights = rng.dirichlet(np.full(num_phases, 3.0))
    durations = np.maximum(1, np.floor(weights * t_total).astype(int))
    # fix rounding so durations sum exactly to t_total
    while durations.sum() > t_total:
        durations[int(np.argmax(durations))] -= 1
    while durations.sum() < t_total:
        durations[int(np.argmin(durations))] += 1
    labels = np.repeat(np.arange(num_phases), durations)
    boundaries = np.cumsum(durations)[:-1]
    progress = np.empty(t_total)
    t = 0
    for k, dur in enumerate(durations):
        local = (np.arange(dur) + 0.5) / dur
        progress[t:t + dur] = (k + local) / num_phases
        t += dur
    return labels, boundaries, progress


def render_video_tokens(cfg: SynthConfig, traj: ActionTrajectory, vmap: ViewMap,
                        progress: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Render the T x N x d token tensor for one video."""
    t_total = len(progress)
    n_action = math.ceil(cfg.n_tokens / 4)
    action_idx = np.sort(rng.choice(cfg.n_tokens, size=n_action, replace=False))
    latents = traj(progress)                       # (T, d_latent)
    action = vmap(latents)                         # (T, d)
    clutter = rng.normal(0.0, cfg.clutter_sigma, size=(cfg.n_tokens, cfg.d))
    tokens = np.broadcast_to(clutter[None, :, :], (t_total, cfg.n_tokens, cfg.d)).copy()
    tokens[:, action_idx, :] = action[:, None, :]
    if cfg.drift_sigma > 0:
        drift = np.cumsum(rng.normal(0.0, cfg.drift_sigma, size=(t_total, cfg.d)), axis=0)
        tokens += drift[:, None, :]
    if cfg.view_noise_sigma > 0:
        tokens += rng.normal(0.0, cfg.view_noise_sigma, size=tokens.shape)
    return tokens.astype(np.float32)


def _split_for(index: int, total: int) -> str:
    n_test = max(1, round(0.2 * total))
    n_val = max(1, round(0.1 * total)) if total >= 4 else 0
    if index < total - n_test - n_val:
        return "train"
    if index < total - n_test:
        return "val"
    return "test"


def generate_synthetic(cfg: SynthConfig, out_dir: str) -> Dataset:
    """Write a manifest plus one embedding file per video under out_dir."""
    cfg.validate()
    os.makedirs(os.path.join(out_dir, "emb"), exist_ok=True)
    master = np.random.SeedSequence(cfg.seed)
    shared_rng = np.random.default_rng(master.spawn(1)[0])
    # phase plateaus and the progress arc are shared by all classes: which
    # phase is showing and how far along it is are common latent factors;
    # classes differ in their harmonic shape
    plateaus = PhasePlateaus.random(cfg.d_latent_true, cfg.num_phases,
                                    shared_rng, cfg.plateau_amplitude)
    arc = ProgressArc.random(cfg.d_latent_true, shared_rng, cfg.arc_amplitude)
    trajectories = [ActionTrajectory.random(cfg.d_latent_true, shared_rng,
                                            plateaus, arc, cfg.harmonics,
                                            cfg.harmonic_amplitude)
                    for _ in range(cfg.num_classes)]
    view_maps = {view: ViewMap.random(cfg.d, cfg.d_latent_true, shared_rng)
                 for view in ("ego", "exo")}

    records: list[VideoRecord] = []
    per_class = [0] * cfg.num_classes
    video_seeds = master.spawn(2 * cfg.num_videos_per_view)
    si = 0
    for view in ("ego", "exo"):
        for i in range(cfg.num_videos_per_view):
            rng = np.random.default_rng(video_seeds[si])
            si += 1
            cls = i % cfg.num_classes
            t_total = int(rng.integers(cfg.frames_range[0], cfg.frames_range[1] + 1))
            labels, key_events, progress = phase_schedule(t_total, cfg.num_phases, rng)
            tokens = render_video_tokens(cfg, trajectories[cls], view_maps[view], progress, rng)
            vid = f"{view}_{i:04d}"
            rel = os.path.join("emb", f"{vid}.byv")
            write_embeddings(os.path.join(out_dir, rel), tokens)
            group_index = i // cfg.num_classes
            group_total = cfg.num_videos_per_view // cfg.num_classes \
                + (1 if cls < cfg.num_videos_per_view % cfg.num_classes else 0)
            records.append(VideoRecord(
                video_id=vid, view=view, action_class=f"class{cls}",
                num_frames=t_total, embedding_path=rel,
                split=_split_for(group_index, group_total),
                phase_labels=[int(x) for x in labels],
                key_event_frames=[int(x) for x in key_events]))
            per_class[cls] += 1

    dataset = Dataset(
        meta=DatasetMeta(n_tokens=cfg.n_tokens, d=cfg.d, num_phases=cfg.num_phases,
                         root=os.path.abspath(out_dir)),
        records=records)
    save_manifest(os.path.join(out_dir, "manifest.json"), dataset)
    return dataset
