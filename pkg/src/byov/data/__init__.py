from .container import read_embeddings, write_embeddings
from .manifest import (
    Dataset,
    DatasetMeta,
    VideoRecord,
    load_manifest,
    load_token_embeddings,
    save_manifest,
)
from .sampling import sample_frames
from .synth import (
    ActionTrajectory,
    SynthConfig,
    ViewMap,
    generate_synthetic,
    phase_schedule,
    render_video_tokens,
)

__all__ = [
    "read_embeddings", "write_embeddings",
    "Dataset", "DatasetMeta", "VideoRecord",
    "load_manifest", "load_token_embeddings", "save_manifest",
    "sample_frames",
    "ActionTrajectory", "SynthConfig", "ViewMap",
    "generate_synthetic", "phase_schedule", "render_video_tokens",
]
