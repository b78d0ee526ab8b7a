"""Run configuration: one JSON document covering data generation, training,
evaluation, and ablation, with strict schema validation (unknown keys are
rejected) and dotted-path ``key=value`` overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields, is_dataclass
from typing import Any, Optional

from .data.synth import SynthConfig
from .errors import ValidationError
from .trainer import TrainConfig


@dataclass
class EvalConfig:
    checkpoint: str = ""
    manifest: str = ""
    use_stm: bool = True
    stm_ratio: float = 0.3
    map_ks: tuple = (5, 10, 15)
    nn_metric: str = "cosine"
    few_shot_percent: Optional[float] = None
    raw_baseline: bool = False

    def validate(self):
        if self.nn_metric not in ("cosine", "euclidean"):
            raise ValidationError(f"nn_metric must be cosine|euclidean, got {self.nn_metric}")
        if not self.map_ks or any(k <= 0 for k in self.map_ks):
            raise ValidationError("map_ks must be a nonempty list of positive ints")
        if self.few_shot_percent is not None and not 0 < self.few_shot_percent <= 100:
            raise ValidationError("few_shot_percent must be in (0, 100]")


@dataclass
class AblateConfig:
    variants: tuple = ("full", "-stm", "-causal", "-msm", "-mcm")
    ratio_sweep: tuple = ()
    map_ks: tuple = (5, 10, 15)


@dataclass
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)


def _coerce(value: Any, target_type: Any, path: str) -> Any:
    """Light type coercion for JSON-decoded values against a field type."""
    if target_type is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if target_type is tuple and isinstance(value, list):
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    return value


def dataclass_from_dict(cls, doc: dict, path: str = ""):
    """Build a dataclass from a plain dict, rejecting unknown keys and
    recursing into nested dataclass fields."""
    if not isinstance(doc, dict):
        raise ValidationError(f"{path or cls.__name__}: expected an object, got {type(doc).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(doc) - set(known)
    if unknown:
        raise ValidationError(f"{path or cls.__name__}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, f in known.items():
        if name not in doc:
            continue
        sub_path = f"{path}.{name}" if path else name
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING \
            else f.default
        if is_dataclass(default):
            kwargs[name] = dataclass_from_dict(type(default), doc[name], sub_path)
        else:
            target = type(default) if default is not None else None
            kwargs[name] = _coerce(doc[name], target, sub_path)
    return cls(**kwargs)


def run_config_to_dict(cfg: RunConfig) -> dict:
    def clean(obj):
        if is_dataclass(obj):
            return {f.name: clean(getattr(obj, f.name)) for f in fields(obj)}
        if isinstance(obj, tuple):
            return [clean(v) for v in obj]
        return obj
    return clean(cfg)


def parse_override(spec: str) -> tuple[str, Any]:
    """Split 'dotted.key=value'; values parse as JSON, falling back to str."""
    if "=" not in spec:
        raise ValidationError(f"override '{spec}' is not KEY=VALUE")
    key, _, raw = spec.partition("=")
    key = key.strip()
    if not key:
        raise ValidationError(f"override '{spec}' has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def apply_override(doc: dict, key: str, value: Any,
                   default_section: Optional[str] = None) -> None:
    """Set a dotted-path key in the nested config dict. Keys whose first
    segment is not a top-level section are resolved inside default_section
    (the active subcommand), so e.g. 'ratios.mcm=0' targets train.ratios.mcm
    for the train command."""
    parts = key.split(".")
    top_level = {f.name for f in fields(RunConfig)}
    if parts[0] not in top_level:
        if default_section is None:
            raise ValidationError(f"override key '{key}' does not name a config section")
        parts = [default_section] + parts
    node = doc
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ValidationError(f"override key '{key}' descends into a scalar")
    node[parts[-1]] = value


def load_run_config(config_path: Optional[str], overrides: list[str] = (),
                    seed: Optional[int] = None,
                    default_section: Optional[str] = None) -> RunConfig:
    """Load the JSON config (or defaults), apply overrides, validate."""
    doc: dict = {}
    if config_path:
        with open(config_path) as f:
            doc = json.load(f)
        if not isinstance(doc, dict):
            raise ValidationError(f"{config_path}: top level must be a JSON object")
    for spec in overrides:
        key, value = parse_override(spec)
        apply_override(doc, key, value, default_section)
    cfg = dataclass_from_dict(RunConfig, doc)
    if seed is not None:
        cfg.synth.seed = seed
        cfg.train.seed = seed
    cfg.synth.validate()
    cfg.train.validate()
    cfg.eval.validate()
    return cfg
