"""Dataset manifest: JSON schema, record validation, embedding ingestion."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import FormatError, ValidationError
from .container import read_embeddings

VIEWS = ("ego", "exo")
SPLITS = ("train", "val", "test")


@dataclass
class VideoRecord:
    video_id: str
    view: str
    action_class: str
    num_frames: int
    embedding_path: str
    split: str
    phase_labels: Optional[list[int]] = None
    key_event_frames: Optional[list[int]] = None

    def validate(self, num_phases: int):
        if self.view not in VIEWS:
            raise ValidationError(f"{self.video_id}: unknown view '{self.view}'")
        if self.split not in SPLITS:
            raise ValidationError(f"{self.video_id}: unknown split '{self.split}'")
        if self.num_frames <= 0:
            raise ValidationError(f"{self.video_id}: num_frames must be positive")
        if self.phase_labels is not None:
            if len(self.phase_labels) != self.num_frames:
                raise ValidationError(
                    f"{self.video_id}: phase_labels length {len(self.phase_labels)}"
                    f" != num_frames {self.num_frames}")
            if any(p < 0 or p >= num_phases for p in self.phase_labels):
                raise ValidationError(f"{self.video_id}: phase label outside [0, {num_phases})")
        if self.key_event_frames is not None:
            kef = self.key_event_frames
            if any(e < 0 or e >= self.num_frames for e in kef):
                raise ValidationError(f"{self.video_id}: key event frame outside [0, T)")
            if any(b <= a for a, b in zip(kef, kef[1:])):
                raise ValidationError(f"{self.video_id}: key_event_frames not strictly increasing")
            if self.phase_labels is not None:
                changes = [t for t in range(1, self.num_frames)
                           if self.phase_labels[t] != self.phase_labels[t - 1]]
                if changes != list(kef):
                    raise ValidationError(
                        f"{self.video_id}: phase boundaries {changes} inconsistent"
                        f" with key events {list(kef)}")


@dataclass
class DatasetMeta:
    n_tokens: int
    d: int
    num_phases: int
    root: str = "."


@dataclass
class Dataset:
    meta: DatasetMeta
    records: list[VideoRecord] = field(default_factory=list)

    def split(self, name: str) -> list[VideoRecord]:
        return [r for r in self.records if r.split == name]

    def by_id(self, video_id: str) -> VideoRecord:
        for r in self.records:
            if r.video_id == video_id:
                return r
        raise ValidationError(f"unknown video_id '{video_id}'")


_RECORD_KEYS = {"video_id", "view", "action_class", "num_frames", "embedding_path",
                "split", "phase_labels", "key_event_frames"}


def load_manifest(path: str) -> Dataset:
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: not valid JSON ({e})") from e
    for key in ("version", "N", "d", "num_phases", "records"):
        if key not in doc:
            raise ValidationError(f"{path}: missing manifest key '{key}'")
    if doc["version"] != 1:
        raise ValidationError(f"{path}: unsupported manifest version {doc['version']}")
    if not doc["records"]:
        raise ValidationError(f"{path}: empty dataset")
    meta = DatasetMeta(n_tokens=int(doc["N"]), d=int(doc["d"]),
                       num_phases=int(doc["num_phases"]),
                       root=os.path.dirname(os.path.abspath(path)))
    records = []
    ids = set()
    for raw in doc["records"]:
        unknown = set(raw) - _RECORD_KEYS
        if unknown:
            raise ValidationError(f"record {raw.get('video_id', '?')}: unknown keys {sorted(unknown)}")
        try:
            rec = VideoRecord(
                video_id=raw["video_id"], view=raw["view"],
                action_class=raw["action_class"], num_frames=int(raw["num_frames"]),
                embedding_path=raw["embedding_path"], split=raw["split"],
                phase_labels=raw.get("phase_labels"),
                key_event_frames=raw.get("key_event_frames"))
        except KeyError as e:
            raise ValidationError(f"record {raw.get('video_id', '?')}: missing field {e}") from e
        rec.validate(meta.num_phases)
        if rec.video_id in ids:
            raise ValidationError(f"duplicate video_id '{rec.video_id}'")
        ids.add(rec.video_id)
        records.append(rec)
    return Dataset(meta=meta, records=records)


def save_manifest(path: str, dataset: Dataset) -> None:
    doc = {
        "version": 1,
        "N": dataset.meta.n_tokens,
        "d": dataset.meta.d,
        "num_phases": dataset.meta.num_phases,
        "records": [],
    }
    for r in dataset.records:
        raw = {
            "video_id": r.video_id, "view": r.view, "action_class": r.action_class,
            "num_frames": r.num_frames, "embedding_path": r.embedding_path,
            "split": r.split,
        }
        if r.phase_labels is not None:
            raw["phase_labels"] = list(map(int, r.phase_labels))
        if r.key_event_frames is not None:
            raw["key_event_frames"] = list(map(int, r.key_event_frames))
        doc["records"].append(raw)
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


def load_token_embeddings(dataset: Dataset, record: VideoRecord) -> np.ndarray:
    """Read the T x N x d tensor for one record, checked against the manifest."""
    path = record.embedding_path
    if not os.path.isabs(path):
        path = os.path.join(dataset.meta.root, path)
    arr = read_embeddings(path)
    expect = (record.num_frames, dataset.meta.n_tokens, dataset.meta.d)
    if arr.shape != expect:
        raise FormatError(f"{record.video_id}: embedding shape {arr.shape}"
                          f" != manifest {expect}")
    return arr
