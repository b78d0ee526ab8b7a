#!/usr/bin/env python3
"""End-to-end synthetic benchmark: generate data, evaluate the raw-embedding
baseline, train the default model, evaluate it, and print the comparison.

Usage: python scripts/run_benchmark.py --out bench_out [--seed 0] [--steps 2000]
"""

import argparse
import json
import os
import sys
import time

from byov.cli import main as byov_main


def run(argv):
    rc = byov_main(argv)
    if rc != 0:
        print(f"command failed with exit code {rc}: {argv}", file=sys.stderr)
        sys.exit(rc)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="bench_out")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=2000)
    args = ap.parse_args()

    data = os.path.join(args.out, "data")
    run_dir = os.path.join(args.out, "run")
    manifest = os.path.join(data, "manifest.json")

    run(["gen-synth", "--seed", str(args.seed), "--out", data])
    run(["eval", "--manifest", manifest, "--raw-baseline",
         "--out", os.path.join(args.out, "eval_raw")])

    t0 = time.time()
    run(["train", "--seed", str(args.seed), "--out", run_dir,
         "--override", f'manifest="{manifest}"',
         "--override", f"steps={args.steps}",
         "--override", "arch.d=32"])
    train_minutes = (time.time() - t0) / 60.0

    run(["eval", "--checkpoint", os.path.join(run_dir, "checkpoint.byvc"),
         "--manifest", manifest, "--out", os.path.join(args.out, "eval_trained")])

    raw = json.load(open(os.path.join(args.out, "eval_raw", "report.json")))
    trained = json.load(open(os.path.join(args.out, "eval_trained", "report.json")))

    print(f"\ntraining time: {train_minutes:.1f} min")
    print(f"{'metric':<22}{'raw':>10}{'trained':>10}")
    for setting in ("regular", "ego2exo", "exo2ego"):
        print(f"{'f1 ' + setting:<22}{raw['f1'][setting]:>10.1f}"
              f"{trained['f1'][setting]:>10.1f}")
        print(f"{'mAP@10 ' + setting:<22}{raw['map_at']['10'][setting]:>10.1f}"
              f"{trained['map_at']['10'][setting]:>10.1f}")
    print(f"{'R2 progression':<22}{raw['r2_progression']:>10.3f}"
          f"{trained['r2_progression']:>10.3f}")
    print(f"{'Kendall tau':<22}{raw['kendall_tau']:>10.3f}"
          f"{trained['kendall_tau']:>10.3f}")

    gain_e2x = trained["map_at"]["10"]["ego2exo"] - raw["map_at"]["10"]["ego2exo"]
    gain_x2e = trained["map_at"]["10"]["exo2ego"] - raw["map_at"]["10"]["exo2ego"]
    print(f"\ncross-view mAP@10 gain: ego2exo {gain_e2x:+.1f}, exo2ego {gain_x2e:+.1f}"
          f" (target: >= +15 each)")
    print(f"tau: raw {raw['kendall_tau']:+.3f} (target |tau| <= 0.2), "
          f"trained {trained['kendall_tau']:+.3f} (target >= 0.6)")


if __name__ == "__main__":
    main()
