#!/usr/bin/env python3
"""Multi-seed ablation sweep on a compact synthetic benchmark, with direction
checks: full vs -msm on tau/R2, full vs -mcm on cross-view F1/mAP@10, and
full vs -causal on tau.

Usage: python scripts/run_ablations.py --out abl_out --seeds 0 1 2 [--steps 400]
"""

import argparse
import json
import os

from byov.data.manifest import load_manifest
from byov.data.synth import SynthConfig, generate_synthetic
from byov.model import ArchConfig
from byov.trainer import TrainConfig, run_ablation_suite

COMPACT_ARCH = ArchConfig(d=32, d_model=64, enc_blocks=4, dec_blocks=2)


def cross_view_mean(metrics, key, k=None):
    d = metrics[key] if k is None else metrics[key][str(k)]
    return (d["ego2exo"] + d["exo2ego"]) / 2.0


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="abl_out")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--steps", type=int, default=400)
    ap.add_argument("--lr", type=float, default=3e-4)
    args = ap.parse_args()

    checks = {"-msm tau": 0, "-msm r2": 0, "-mcm f1": 0, "-mcm map10": 0,
              "-causal tau": 0}
    for seed in args.seeds:
        data = os.path.join(args.out, f"data_seed{seed}")
        if not os.path.exists(os.path.join(data, "manifest.json")):
            generate_synthetic(SynthConfig(seed=seed), data)
        cfg = TrainConfig(manifest=os.path.join(data, "manifest.json"),
                          out_dir=os.path.join(args.out, f"seed{seed}"),
                          seed=seed, steps=args.steps, arch=COMPACT_ARCH)
        cfg.optimizer.lr = args.lr
        report = run_ablation_suite(cfg, variants=["full", "-msm", "-mcm", "-causal"],
                                    eval_map_ks=(10,))
        with open(os.path.join(args.out, f"ablation_seed{seed}.json"), "w") as f:
            json.dump(report, f, indent=2, sort_keys=True)
        rows = {r["variant"]: r["metrics"] for r in report["variants"]
                if r["status"] == "ok"}
        full = rows["full"]
        print(f"\nseed {seed}:")
        for name, m in rows.items():
            print(f"  {name:>8s}  tau {m['kendall_tau']:+.3f}  "
                  f"r2 {m['r2_progression']:+.3f}  "
                  f"xF1 {cross_view_mean(m, 'f1'):5.1f}  "
                  f"xmAP10 {cross_view_mean(m, 'map_at', 10):5.1f}")
        checks["-msm tau"] += full["kendall_tau"] > rows["-msm"]["kendall_tau"]
        checks["-msm r2"] += full["r2_progression"] > rows["-msm"]["r2_progression"]
        checks["-mcm f1"] += cross_view_mean(full, "f1") > cross_view_mean(rows["-mcm"], "f1")
        checks["-mcm map10"] += (cross_view_mean(full, "map_at", 10)
                                 > cross_view_mean(rows["-mcm"], "map_at", 10))
        checks["-causal tau"] += full["kendall_tau"] >= rows["-causal"]["kendall_tau"]

    n = len(args.seeds)
    print("\ndirection checks (seeds satisfying / total, majority required):")
    for name, wins in checks.items():
        verdict = "ok" if wins * 2 > n else "FAIL"
        print(f"  full > {name:<14s} {wins}/{n}  {verdict}")


if __name__ == "__main__":
    main()
