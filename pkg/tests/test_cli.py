"""Command-line pipeline: subcommand wiring, config/override composition,
exit codes, and output artifacts."""

import csv
import json
import os

import numpy as np
import pytest

from byov.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK, build_parser, main

TINY_ARCH = {"d": 16, "d_model": 16, "enc_blocks": 1, "dec_blocks": 1,
             "heads": 1, "max_len": 32}
TINY_SYNTH = {"num_videos_per_view": 6, "frames_range": [10, 14], "num_phases": 2,
              "num_classes": 2, "n_tokens": 8, "d": 16, "d_latent_true": 3}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A generated dataset, a config file, and a trained checkpoint."""
    root = tmp_path_factory.mktemp("cli")
    data_dir = str(root / "data")
    cfg = {
        "synth": dict(TINY_SYNTH, seed=11),
        "train": {"manifest": os.path.join(data_dir, "manifest.json"),
                  "steps": 3, "frames_per_clip": 8, "checkpoint_every": 3,
                  "seed": 11, "arch": TINY_ARCH,
                  "out_dir": str(root / "run")},
        "eval": {"manifest": os.path.join(data_dir, "manifest.json"),
                 "map_ks": [3]},
        "ablate": {"map_ks": [3]},
    }
    cfg_path = str(root / "config.json")
    with open(cfg_path, "w") as f:
        json.dump(cfg, f)
    assert main(["gen-synth", "--config", cfg_path, "--out", data_dir]) == EXIT_OK
    assert main(["train", "--config", cfg_path]) == EXIT_OK
    ckpt = str(root / "run" / "checkpoint.byvc")
    assert os.path.exists(ckpt)
    return {"root": root, "config": cfg_path, "data": data_dir, "ckpt": ckpt,
            "manifest": os.path.join(data_dir, "manifest.json")}


# ---------------------------------------------------------------------------
# pipeline and artifacts
# ---------------------------------------------------------------------------


def test_eval_writes_report_json_and_csv(workspace, capsys):
    out = str(workspace["root"] / "evalout")
    rc = main(["eval", "--config", workspace["config"],
               "--checkpoint", workspace["ckpt"], "--out", out])
    assert rc == EXIT_OK
    report = json.loads(open(os.path.join(out, "report.json")).read())
    assert set(report["f1"]) == {"regular", "ego2exo", "exo2ego"}
    rows = list(csv.reader(open(os.path.join(out, "report.csv"))))
    # header + 3 f1 + 1 K x 3 settings + r2 + tau
    assert len(rows) == 1 + 3 + 3 + 2
    assert rows[0] == ["metric", "setting", "value"]
    printed = json.loads(capsys.readouterr().out)
    assert printed["kendall_tau"] == report["kendall_tau"]


def test_eval_raw_baseline_needs_no_checkpoint(workspace):
    out = str(workspace["root"] / "evalraw")
    rc = main(["eval", "--config", workspace["config"], "--raw-baseline",
               "--out", out])
    assert rc == EXIT_OK
    report = json.loads(open(os.path.join(out, "report.json")).read())
    assert report["config"]["encoder"] == "raw"


def test_eval_few_shot_flag(workspace):
    out = str(workspace["root"] / "evalfs")
    rc = main(["eval", "--config", workspace["config"],
               "--checkpoint", workspace["ckpt"], "--few-shot", "50",
               "--out", out])
    assert rc == EXIT_OK
    report = json.loads(open(os.path.join(out, "report.json")).read())
    assert report["config"]["few_shot_percent"] == 50.0


def test_embed_writes_one_latent_file_per_video(workspace):
    from byov.data.container import read_embeddings
    out = str(workspace["root"] / "latents")
    rc = main(["embed", "--config", workspace["config"],
               "--checkpoint", workspace["ckpt"], "--out", out])
    assert rc == EXIT_OK
    files = sorted(os.listdir(out))
    assert len(files) == 2 * TINY_SYNTH["num_videos_per_view"]
    lat = read_embeddings(os.path.join(out, files[0]))
    assert lat.ndim == 3 and lat.shape[1] == 1 and lat.shape[2] == TINY_ARCH["d_model"]


def test_gen_synth_same_seed_is_byte_identical(workspace):
    a = str(workspace["root"] / "rea")
    b = str(workspace["root"] / "reb")
    for out in (a, b):
        assert main(["gen-synth", "--config", workspace["config"], "--out", out]) == EXIT_OK
    for name in sorted(os.listdir(os.path.join(a, "emb"))):
        assert open(os.path.join(a, "emb", name), "rb").read() == \
            open(os.path.join(b, "emb", name), "rb").read()
    ma = json.loads(open(os.path.join(a, "manifest.json")).read())
    mb = json.loads(open(os.path.join(b, "manifest.json")).read())
    ma["root"] = mb["root"] = ""
    assert ma == mb


def test_train_resume_flag(workspace):
    out = str(workspace["root"] / "resumed")
    rc = main(["train", "--config", workspace["config"], "--out", out,
               "--override", "steps=5", "--resume", workspace["ckpt"]])
    assert rc == EXIT_OK
    assert os.path.exists(os.path.join(out, "checkpoint.byvc"))


def test_ablate_writes_table(workspace):
    out = str(workspace["root"] / "abl")
    rc = main(["ablate", "--config", workspace["config"], "--out", out,
               "--override", "ablate.variants=[\"full\",\"-mcm\"]",
               "--override", "ablate.map_ks=[3]",
               "--override", "train.steps=2"])
    assert rc == EXIT_OK
    report = json.loads(open(os.path.join(out, "ablation.json")).read())
    assert [r["variant"] for r in report["variants"]] == ["full", "-mcm"]
    rows = list(csv.reader(open(os.path.join(out, "ablation.csv"))))
    assert len(rows) == 3 and rows[0][0] == "variant"


# ---------------------------------------------------------------------------
# overrides and config composition
# ---------------------------------------------------------------------------


def test_override_wins_over_config_file(workspace, capsys):
    out = str(workspace["root"] / "ovr")
    rc = main(["train", "--config", workspace["config"], "--out", out,
               "--override", "train.steps=2"])
    assert rc == EXIT_OK
    assert "step 2:" in capsys.readouterr().out


def test_unprefixed_override_resolves_under_subcommand_section(workspace, capsys):
    out = str(workspace["root"] / "ovr2")
    rc = main(["train", "--config", workspace["config"], "--out", out,
               "--override", "flags.enable_mcm=false", "--override", "steps=2"])
    assert rc == EXIT_OK
    final = capsys.readouterr().out
    assert "l_mcm_ego=0.000000" in final


def test_seed_flag_changes_generation(workspace, tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["gen-synth", "--config", workspace["config"], "--seed", "1",
                 "--out", a]) == EXIT_OK
    assert main(["gen-synth", "--config", workspace["config"], "--seed", "2",
                 "--out", b]) == EXIT_OK
    name = sorted(os.listdir(os.path.join(a, "emb")))[0]
    assert open(os.path.join(a, "emb", name), "rb").read() != \
        open(os.path.join(b, "emb", name), "rb").read()


def test_help_documents_every_flag(capsys):
    parser = build_parser()
    for cmd in ("gen-synth", "train", "embed", "eval", "ablate"):
        with pytest.raises(SystemExit) as exc:
            parser.parse_args([cmd, "--help"])
        assert exc.value.code == 0
        text = capsys.readouterr().out
        for flag in ("--config", "--seed", "--override", "--out", "--threads"):
            assert flag in text, (cmd, flag)


# ---------------------------------------------------------------------------
# exit codes
# ---------------------------------------------------------------------------


def test_missing_manifest_exits_2(workspace, tmp_path):
    rc = main(["train", "--config", workspace["config"],
               "--override", 'manifest="/nope/missing.json"',
               "--out", str(tmp_path / "x")])
    assert rc == EXIT_CONFIG


def test_unknown_config_key_exits_2(tmp_path):
    bad = str(tmp_path / "bad.json")
    with open(bad, "w") as f:
        json.dump({"trian": {}}, f)
    assert main(["gen-synth", "--config", bad, "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_malformed_override_exits_2(workspace, tmp_path):
    rc = main(["gen-synth", "--config", workspace["config"],
               "--override", "no_equals_sign", "--out", str(tmp_path / "o")])
    assert rc == EXIT_CONFIG


def test_single_phase_dataset_exits_2(workspace, tmp_path):
    rc = main(["gen-synth", "--config", workspace["config"],
               "--override", "num_phases=1", "--out", str(tmp_path / "o")])
    assert rc == EXIT_CONFIG


def test_missing_checkpoint_exits_2(workspace, tmp_path):
    rc = main(["eval", "--config", workspace["config"],
               "--out", str(tmp_path / "o")])  # no checkpoint, no raw flag
    assert rc == EXIT_CONFIG


def test_corrupt_checkpoint_exits_3(workspace, tmp_path):
    bad = str(tmp_path / "bad.byvc")
    blob = open(workspace["ckpt"], "rb").read()
    with open(bad, "wb") as f:
        f.write(b"XXXX" + blob[4:])
    rc = main(["eval", "--config", workspace["config"], "--checkpoint", bad,
               "--out", str(tmp_path / "o")])
    assert rc == EXIT_IO


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_diverging_run_exits_4(workspace, tmp_path):
    rc = main(["train", "--config", workspace["config"],
               "--out", str(tmp_path / "x"),
               "--override", "optimizer.lr=1e12", "--override", "steps=20"])
    assert rc == EXIT_NUMERIC
