"""Downstream evaluation: frame embedding with the trained encoder (decoder
discarded) and the four metrics -- phase classification F1, frame retrieval
mAP@K, phase-progression R², and Kendall's tau -- in regular / ego2exo /
exo2ego settings."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.metrics import f1_score
from sklearn.svm import LinearSVC

from .data.manifest import Dataset, VideoRecord, load_token_embeddings
from .errors import ContractError, DataError
from .model import ModelParams, encode
from .numerics.tensor import no_grad
from .stm import mean_pool, merge_selected

SETTINGS = ("regular", "ego2exo", "exo2ego")


@dataclass
class EmbeddedVideo:
    video_id: str
    view: str
    action_class: str
    split: str
    latents: np.ndarray  # (T, width)
    phase_labels: Optional[np.ndarray]
    key_event_frames: Optional[np.ndarray]

    @property
    def num_frames(self) -> int:
        return self.latents.shape[0]


def embed_video(params: Optional[ModelParams], dataset: Dataset, record: VideoRecord,
                stm_ratio: Optional[float] = 0.3,
                tokens: Optional[np.ndarray] = None) -> EmbeddedVideo:
    """Project one video's frames into the latent space.

    stm_ratio=None falls back to plain token-mean pooling; params=None keeps
    the merged raw embeddings (the untrained-features baseline).
    """
    if tokens is None:
        tokens = load_token_embeddings(dataset, record)
    if stm_ratio is not None:
        merged, _ = merge_selected(tokens, stm_ratio)
    else:
        merged = mean_pool(tokens)
    if params is None:
        latents = merged.astype(np.float64)
    else:
        with no_grad():
            z = encode(params, merged.astype(params.dtype), np.arange(merged.shape[0]),
                       video_id=record.video_id, view=record.view)
        latents = z.data.data.astype(np.float64)
    return EmbeddedVideo(
        video_id=record.video_id, view=record.view, action_class=record.action_class,
        split=record.split, latents=latents,
        phase_labels=None if record.phase_labels is None else np.asarray(record.phase_labels),
        key_event_frames=None if record.key_event_frames is None
        else np.asarray(record.key_event_frames))


def _stack_frames(videos: list[EmbeddedVideo]) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for v in videos:
        if v.phase_labels is None:
            raise ContractError(f"{v.video_id}: phase labels required")
        xs.append(v.latents)
        ys.append(v.phase_labels)
    return np.concatenate(xs), np.concatenate(ys)


def classify_f1(train_x: np.ndarray, train_y: np.ndarray,
                test_x: np.ndarray, test_y: np.ndarray) -> float:
    """Macro-averaged F1 (percent) of a one-vs-rest linear hinge-loss
    classifier (L2 regularization, C=1.0) fit on frozen latents."""
    if len(np.unique(train_y)) < 2:
        raise DataError("classification needs >= 2 classes in the train set")
    clf = LinearSVC(C=1.0, loss="squared_hinge", random_state=0, max_iter=20000, tol=1e-4)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        clf.fit(train_x, train_y)
    pred = clf.predict(test_x)
    labels = np.union1d(np.unique(train_y), np.unique(test_y))
    return 100.0 * float(f1_score(test_y, pred, labels=labels, average="macro",
                                  zero_division=0))


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(norms, 1e-12)


def _similarity(a: np.ndarray, b: np.ndarray, metric: str) -> np.ndarray:
    if metric == "cosine":
        return _normalize_rows(a) @ _normalize_rows(b).T
    if metric == "euclidean":
        d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        return -d2
    raise ContractError(f"unknown similarity metric '{metric}'")


def retrieval_map(queries: list[EmbeddedVideo], gallery: list[EmbeddedVideo],
                  k: int, metric: str = "cosine") -> float:
    """mAP@K (percent) over all query frames. Gallery frames from the query's
    own video are excluded; relevance is a shared phase label; ranking is by
    similarity descending, ties broken by gallery index."""
    g_lat, g_lab = _stack_frames(gallery)
    g_vid = np.concatenate([[v.video_id] * v.num_frames for v in gallery])
    if g_lat.shape[0] < k:
        raise DataError(f"gallery has {g_lat.shape[0]} frames < K={k}")
    aps: list[float] = []
    for q in queries:
        if q.phase_labels is None:
            raise ContractError(f"{q.video_id}: phase labels required")
        allowed = g_vid != q.video_id
        if not np.any(allowed):
            raise DataError(f"empty gallery after excluding video {q.video_id}")
        sims = _similarity(q.latents, g_lat[allowed], metric)
        labels = g_lab[allowed]
        for qi in range(q.num_frames):
            order = np.argsort(-sims[qi], kind="stable")
            rel_sorted = labels[order] == q.phase_labels[qi]
            r_total = int(rel_sorted.sum())
            if r_total == 0:
                aps.append(0.0)
                continue
            top = rel_sorted[:k].astype(np.float64)
            precision_at = np.cumsum(top) / (np.arange(len(top)) + 1)
            ap = float((top * precision_at).sum() / min(k, r_total))
            aps.append(ap)
    return 100.0 * float(np.mean(aps))


def progression_targets(video: EmbeddedVideo) -> np.ndarray:
    """Per-frame signed offsets (t - key_event)/T, one column per key event."""
    if video.key_event_frames is None:
        raise ContractError(f"{video.video_id}: key_event_frames required")
    t = video.num_frames
    frames = np.arange(t)[:, None]
    return (frames - video.key_event_frames[None, :]) / t


def _ridge_fit(x: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    xb = np.hstack([x, np.ones((x.shape[0], 1))])
    gram = xb.T @ xb + lam * np.eye(xb.shape[1])
    return np.linalg.solve(gram, xb.T @ y)


def phase_progression_r2(train_videos: list[EmbeddedVideo],
                         test_videos: list[EmbeddedVideo],
                         lam: float = 1e-4) -> float:
    """Closed-form ridge regression from latents to progression targets,
    averaged R² over key-event dimensions on the pooled test frames."""
    if any(v.key_event_frames is None for v in train_videos + test_videos):
        raise DataError("every video needs key_event_frames for the R² metric")
    n_events = {len(v.key_event_frames) for v in train_videos + test_videos}
    if len(n_events) != 1 or 0 in n_events:
        raise DataError("videos disagree on (or lack) key event counts")
    train_x = np.concatenate([v.latents for v in train_videos])
    train_y = np.concatenate([progression_targets(v) for v in train_videos])
    test_x = np.concatenate([v.latents for v in test_videos])
    test_y = np.concatenate([progression_targets(v) for v in test_videos])
    beta = _ridge_fit(train_x, train_y, lam)
    pred = np.hstack([test_x, np.ones((test_x.shape[0], 1))]) @ beta
    r2s = []
    for e in range(test_y.shape[1]):
        y = test_y[:, e]
        ss_tot = float(((y - y.mean()) ** 2).sum())
        if ss_tot == 0.0:
            warnings.warn(f"zero target variance for event {e}; excluded from R²")
            continue
        ss_res = float(((y - pred[:, e]) ** 2).sum())
        r2s.append(1.0 - ss_res / ss_tot)
    if not r2s:
        raise DataError("R² undefined for every event dimension")
    return float(np.mean(r2s))


def kendall_tau(a: np.ndarray, b: np.ndarray, metric: str = "cosine") -> float:
    """Alignment of video a against video b: nearest-neighbor indices in b
    for each frame of a, then (concordant - discordant) / all pairs; a
    nearest-neighbor tie (p == q) counts as discordant."""
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ContractError("kendall_tau needs >= 2 frames per video")
    sims = _similarity(a, b, metric)
    nn = np.argmax(sims, axis=1)  # ties resolve to the lowest index
    t = a.shape[0]
    diff = nn[None, :] - nn[:, None]
    iu = np.triu_indices(t, k=1)
    concordant = int((diff[iu] > 0).sum())
    total = t * (t - 1) // 2
    return (concordant - (total - concordant)) / total


def dataset_kendall_tau(ego_videos: list[EmbeddedVideo], exo_videos: list[EmbeddedVideo],
                        metric: str = "cosine") -> float:
    """Mean tau over all ordered cross-view video pairs (both directions)."""
    if not ego_videos or not exo_videos:
        raise DataError("kendall tau needs test videos in both views")
    taus = []
    for a in ego_videos:
        for b in exo_videos:
            taus.append(kendall_tau(a.latents, b.latents, metric))
            taus.append(kendall_tau(b.latents, a.latents, metric))
    return float(np.mean(taus))


# ---------------------------------------------------------------------------
# report assembly
# ---------------------------------------------------------------------------


def _few_shot_subsample(x: np.ndarray, y: np.ndarray, percent: float,
                        seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    keep: list[np.ndarray] = []
    for label in np.unique(y):
        idx = np.flatnonzero(y == label)
        n = max(1, int(round(len(idx) * percent / 100.0)))
        keep.append(rng.choice(idx, size=n, replace=False))
    sel = np.sort(np.concatenate(keep))
    return x[sel], y[sel]


def eval_all(params: Optional[ModelParams], dataset: Dataset,
             stm_ratio: Optional[float] = 0.3,
             map_ks: tuple[int, ...] = (5, 10, 15),
             few_shot_percent: Optional[float] = None,
             nn_metric: str = "cosine", few_shot_seed: int = 0) -> dict:
    """Embed every train/test video once and compute the full metrics report."""
    embeds: dict[str, list[EmbeddedVideo]] = {"train": [], "test": []}
    for split in ("train", "test"):
        for rec in dataset.split(split):
            embeds[split].append(embed_video(params, dataset, rec, stm_ratio))
    if not embeds["test"]:
        raise DataError("test split is empty")
    train_by_view = {v: [e for e in embeds["train"] if e.view == v] for v in ("ego", "exo")}
    test_by_view = {v: [e for e in embeds["test"] if e.view == v] for v in ("ego", "exo")}

    def fit_eval_sets(setting: str):
        if setting == "regular":
            return embeds["train"], embeds["test"]
        if setting == "ego2exo":
            return train_by_view["ego"], test_by_view["exo"]
        return train_by_view["exo"], test_by_view["ego"]

    f1 = {}
    for setting in SETTINGS:
        fit_vids, test_vids = fit_eval_sets(setting)
        fx, fy = _stack_frames(fit_vids)
        tx, ty = _stack_frames(test_vids)
        if few_shot_percent is not None:
            fx, fy = _few_shot_subsample(fx, fy, few_shot_percent, few_shot_seed)
        f1[setting] = classify_f1(fx, fy, tx, ty)

    map_at: dict[str, dict[str, float]] = {str(k): {} for k in map_ks}
    for k in map_ks:
        map_at[str(k)]["regular"] = retrieval_map(embeds["test"], embeds["test"], k, nn_metric)
        map_at[str(k)]["ego2exo"] = retrieval_map(test_by_view["ego"], test_by_view["exo"],
                                                  k, nn_metric)
        map_at[str(k)]["exo2ego"] = retrieval_map(test_by_view["exo"], test_by_view["ego"],
                                                  k, nn_metric)

    r2 = phase_progression_r2(embeds["train"], embeds["test"])
    tau = dataset_kendall_tau(test_by_view["ego"], test_by_view["exo"], nn_metric)

    return {
        "f1": f1,
        "map_at": map_at,
        "r2_progression": r2,
        "kendall_tau": tau,
        "config": {
            "stm_ratio": stm_ratio,
            "nn_metric": nn_metric,
            "few_shot_percent": few_shot_percent,
            "map_ks": list(map_ks),
            "encoder": "raw" if params is None else "checkpoint",
        },
    }


def report_to_csv_rows(report: dict) -> list[tuple[str, str, float]]:
    """Flatten a metrics report to (metric, setting, value) rows."""
    rows = []
    for setting, value in report["f1"].items():
        rows.append(("f1", setting, value))
    for k, per_setting in report["map_at"].items():
        for setting, value in per_setting.items():
            rows.append((f"map_at_{k}", setting, value))
    rows.append(("r2_progression", "all", report["r2_progression"]))
    rows.append(("kendall_tau", "all", report["kendall_tau"]))
    return rows
