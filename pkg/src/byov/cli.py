"""Command-line pipeline: synthetic data generation, training, latent
dumps, evaluation, and the ablation suite.

Exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 numeric failure.
Set BYOV_LOG={error,info,debug} to control verbosity.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from contextlib import nullcontext
from typing import Optional

import numpy as np

from .config import EvalConfig, load_run_config, run_config_to_dict
from .data.container import write_embeddings
from .data.manifest import load_manifest
from .data.synth import generate_synthetic
from .errors import (
    ContractError,
    DataError,
    DegenerateAttentionError,
    FormatError,
    NumericError,
    ShapeError,
    ValidationError,
)
from .evaluation import embed_video, eval_all, report_to_csv_rows
from .model import load_checkpoint
from .trainer import run_ablation_suite, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

log = logging.getLogger("byov")


def _setup_logging():
    level = os.environ.get("BYOV_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")


def _thread_limit(n: Optional[int]):
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _load_eval_params(eval_cfg: EvalConfig):
    """Checkpoint parameters, or None for the raw-embedding baseline."""
    if eval_cfg.raw_baseline:
        return None
    if not eval_cfg.checkpoint:
        raise ValidationError("eval needs a checkpoint (or raw_baseline=true)")
    params, _, _, _ = load_checkpoint(eval_cfg.checkpoint)
    return params


def _write_report(report: dict, out_dir: str, stem: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, f"{stem}.json")
    with open(json_path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    log.info("wrote %s", json_path)


def cmd_gen_synth(args) -> int:
    cfg = load_run_config(args.config, args.override, args.seed, "synth")
    out_dir = args.out or "data/synth"
    dataset = generate_synthetic(cfg.synth, out_dir)
    per_view = {v: sum(1 for r in dataset.records if r.view == v) for v in ("ego", "exo")}
    lengths = [r.num_frames for r in dataset.records]
    print(f"wrote {len(dataset.records)} videos to {out_dir} "
          f"(ego={per_view['ego']}, exo={per_view['exo']}, "
          f"phases={cfg.synth.num_phases}, T in [{min(lengths)}, {max(lengths)}])")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.override, args.seed, "train")
    if args.out:
        cfg.train.out_dir = args.out
    if not cfg.train.manifest:
        raise ValidationError("train.manifest is required")
    if not os.path.exists(cfg.train.manifest):
        raise ValidationError(f"dataset manifest not found: {cfg.train.manifest}")
    _, ckpt_path, logbook = train(cfg.train, resume_from=args.resume)
    final = logbook[-1]
    print(f"step {final['step']}: "
          + " ".join(f"{k}={final[k]:.6f}" for k in
                     ("l_msm_ego", "l_msm_exo", "l_mcm_ego", "l_mcm_exo", "l_total")))
    print(f"checkpoint: {ckpt_path}")
    return EXIT_OK


def cmd_embed(args) -> int:
    cfg = load_run_config(args.config, args.override, args.seed, "eval")
    if args.checkpoint:
        cfg.eval.checkpoint = args.checkpoint
    if args.manifest:
        cfg.eval.manifest = args.manifest
    params = _load_eval_params(cfg.eval)
    dataset = load_manifest(cfg.eval.manifest)
    out_dir = args.out or "latents"
    os.makedirs(out_dir, exist_ok=True)
    ratio = cfg.eval.stm_ratio if cfg.eval.use_stm else None
    for rec in dataset.records:
        ev = embed_video(params, dataset, rec, ratio)
        path = os.path.join(out_dir, f"{rec.video_id}.byv")
        write_embeddings(path, ev.latents[:, None, :].astype(np.float32))
    print(f"wrote {len(dataset.records)} latent dumps to {out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config, args.override, args.seed, "eval")
    if args.checkpoint:
        cfg.eval.checkpoint = args.checkpoint
    if args.manifest:
        cfg.eval.manifest = args.manifest
    if args.few_shot is not None:
        cfg.eval.few_shot_percent = args.few_shot
    if args.raw_baseline:
        cfg.eval.raw_baseline = True
    cfg.eval.validate()
    params = _load_eval_params(cfg.eval)
    dataset = load_manifest(cfg.eval.manifest)
    report = eval_all(params, dataset,
                      stm_ratio=cfg.eval.stm_ratio if cfg.eval.use_stm else None,
                      map_ks=tuple(cfg.eval.map_ks), nn_metric=cfg.eval.nn_metric,
                      few_shot_percent=cfg.eval.few_shot_percent)
    out_dir = args.out or "eval_out"
    _write_report(report, out_dir, "report")
    csv_path = os.path.join(out_dir, "report.csv")
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["metric", "setting", "value"])
        for row in report_to_csv_rows(report):
            writer.writerow(row)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = load_run_config(args.config, args.override, args.seed, "ablate")
    if args.out:
        cfg.train.out_dir = args.out
    if not cfg.train.manifest:
        raise ValidationError("train.manifest is required")
    sweep = [tuple(t) for t in cfg.ablate.ratio_sweep] or None
    report = run_ablation_suite(cfg.train, variants=list(cfg.ablate.variants),
                                ratio_sweep=sweep,
                                eval_map_ks=tuple(cfg.ablate.map_ks))
    out_dir = args.out or cfg.train.out_dir
    _write_report(report, out_dir, "ablation")
    csv_path = os.path.join(out_dir, "ablation.csv")
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["variant", "status", "f1_regular", "f1_ego2exo", "f1_exo2ego",
                         "map10_regular", "map10_ego2exo", "map10_exo2ego",
                         "r2_progression", "kendall_tau"])
        for row in report["variants"]:
            m = row["metrics"]
            if m is None:
                writer.writerow([row["variant"], row["status"]] + [""] * 8)
                continue
            map10 = m["map_at"].get("10", {})
            writer.writerow([
                row["variant"], row["status"],
                m["f1"]["regular"], m["f1"]["ego2exo"], m["f1"]["exo2ego"],
                map10.get("regular", ""), map10.get("ego2exo", ""), map10.get("exo2ego", ""),
                m["r2_progression"], m["kendall_tau"]])
    for row in report["variants"]:
        status = row["status"]
        tag = "ok" if status == "ok" else status
        print(f"{row['variant']:>10s}  {tag}")
    print(f"table: {csv_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="byov",
        description="Two-view masked frame-embedding modeling: data generation, "
                    "training, embedding, evaluation, ablations.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run config path")
        p.add_argument("--seed", type=int, help="override the data/train seed")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted-path config override (repeatable); wins over the file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int, help="cap BLAS thread pools")

    p = sub.add_parser("gen-synth", help="generate a synthetic two-view dataset")
    common(p)
    p.set_defaults(fn=cmd_gen_synth)

    p = sub.add_parser("train", help="train a model on a dataset manifest")
    common(p)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("embed", help="dump per-video latents with a checkpoint")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint path")
    p.add_argument("--manifest", help="dataset manifest path")
    p.set_defaults(fn=cmd_embed)

    p = sub.add_parser("eval", help="run the metrics report on a checkpoint")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint path")
    p.add_argument("--manifest", help="dataset manifest path")
    p.add_argument("--few-shot", type=float, dest="few_shot",
                   help="percent of train frames per class for the classifier")
    p.add_argument("--raw-baseline", action="store_true",
                   help="evaluate raw merged embeddings instead of a checkpoint")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate the ablation variants")
    common(p)
    p.set_defaults(fn=cmd_ablate)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        with _thread_limit(args.threads):
            return args.fn(args)
    except (ValidationError, ContractError, ShapeError, DataError,
            json.JSONDecodeError, FileNotFoundError) as e:
        log.error("configuration error: %s", e)
        return EXIT_CONFIG
    except (FormatError, OSError) as e:
        log.error("I/O error: %s", e)
        return EXIT_IO
    except (NumericError, DegenerateAttentionError) as e:
        log.error("numeric failure: %s", e)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
