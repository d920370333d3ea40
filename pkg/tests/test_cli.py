"""End-to-end checks of the forcesim CLI, run in process via main().

Everything here drives the real handlers with tiny workloads: short
rollouts, a few synthetic episodes, double-digit training steps. The
point is the plumbing (flag routing, file outputs, manifests, reruns,
exit codes), not model quality; that lives in the library tests.
"""

import json
import os

import pytest

from forcesim.cli import TICK_COLS, main
from forcesim.estimator import AXIS_NAMES, RegressorModel
from forcesim.imitation import BCPolicy


def read_csv_lines(path):
    with open(path) as fh:
        return [line.rstrip("\n") for line in fh]


def load_manifest(out_dir, subcommand):
    path = os.path.join(out_dir, f"{subcommand.replace('-', '_')}_manifest.json")
    assert os.path.isfile(path), f"missing manifest {path}"
    with open(path) as fh:
        return json.load(fh), path


def test_unknown_command_exits():
    with pytest.raises(SystemExit):
        main(["not-a-command"])


def test_demo_mode_rejects_unknown_mode():
    with pytest.raises(SystemExit):
        main(["demo-mode", "--mode", "bogus"])


def test_track_eval_outputs_and_assert(tmp_path):
    out = str(tmp_path)
    rc = main(["track-eval", "--steps", "600", "--seed", "3",
               "--out", out, "--assert"])
    assert rc == 0

    lines = read_csv_lines(os.path.join(out, "tracking_eval.csv"))
    assert lines[0] == ("seed,window,t_start,err_x,err_y,err_z,"
                        "est_err_x,est_err_y,est_err_z")
    assert len(lines) >= 4
    assert all(line.startswith("3,") for line in lines[1:])

    manifest, _ = load_manifest(out, "track-eval")
    assert manifest["subcommand"] == "track-eval"
    assert manifest["config"]["track_steps"] == 600
    assert manifest["config"]["seed"] == 3
    assert manifest["argv"][0] == "track-eval"
    assert any(p.endswith("tracking_eval.csv") for p in manifest["outputs"])
    # matched-force CSV only appears with --forces
    assert not os.path.exists(os.path.join(out, "matched_force_eval.csv"))


def test_rerun_reproduces_csv_bytes(tmp_path):
    out = str(tmp_path)
    assert main(["track-eval", "--steps", "600", "--seed", "4",
                 "--out", out]) == 0
    csv_path = os.path.join(out, "tracking_eval.csv")
    with open(csv_path, "rb") as fh:
        first = fh.read()

    _, manifest_path = load_manifest(out, "track-eval")
    assert main(["rerun", manifest_path]) == 0
    with open(csv_path, "rb") as fh:
        assert fh.read() == first


def test_rerun_rejects_empty_manifest(tmp_path, capsys):
    path = tmp_path / "stub_manifest.json"
    path.write_text(json.dumps({"argv": [], "config": {}}))
    assert main(["rerun", str(path)]) == 1
    assert "no argv" in capsys.readouterr().err


def test_demo_mode_kick(tmp_path):
    out = str(tmp_path)
    rc = main(["demo-mode", "--mode", "kick", "--out", out, "--assert"])
    assert rc == 0

    lines = read_csv_lines(os.path.join(out, "demo_kick.csv"))
    assert lines[0] == ",".join(TICK_COLS)
    assert len(lines) > 10

    with open(os.path.join(out, "demo_kick_metrics.jsonl")) as fh:
        metrics = json.loads(fh.readline())
    assert metrics["mode"] == "kick"
    assert metrics["pct_error"] <= 10.0


def test_force_eval_small_sweep(tmp_path):
    out = str(tmp_path)
    rc = main(["force-eval", "--levels", "0,30", "--hold", "5",
               "--out", out, "--assert"])
    assert rc == 0

    lines = read_csv_lines(os.path.join(out, "force_sweep.csv"))
    assert lines[0] == ("level,achieved,pct_error,"
                        "est_rms_x,est_rms_y,est_rms_z")
    assert len(lines) == 3
    assert [line.split(",")[0] for line in lines[1:]] == ["0.0", "30.0"]

    log_lines = read_csv_lines(os.path.join(out, "force_sweep_log.csv"))
    assert log_lines[0] == ",".join(TICK_COLS)
    manifest, _ = load_manifest(out, "force-eval")
    assert manifest["config"]["force_levels"] == [0.0, 30.0]
    assert manifest["config"]["force_hold_s"] == 5.0


def test_estimator_pipeline(tmp_path):
    out = str(tmp_path)
    train_npz = os.path.join(out, "train.npz")
    val_npz = os.path.join(out, "val.npz")
    episodes_dir = os.path.join(out, "episodes")

    rc = main(["gen-data", "--episodes", "3", "--ticks", "80",
               "--seed", "11", "--out", out, "--out-data", train_npz,
               "--keep-episodes", episodes_dir])
    assert rc == 0
    assert os.path.isfile(train_npz)
    raw = [f for f in os.listdir(episodes_dir)
           if f.endswith(".episode.jsonl")]
    assert len(raw) == 3

    rc = main(["gen-data", "--episodes", "2", "--ticks", "80",
               "--seed", "12", "--out", out, "--out-data", val_npz])
    assert rc == 0

    # Train from the raw episode directory (exercises the dir loader),
    # validate against the npz cache.
    model_path = os.path.join(out, "est.bin")
    rc = main(["train-estimator", "--data", episodes_dir,
               "--val", val_npz, "--steps", "60", "--batch", "64",
               "--hidden", "16", "--seed", "11", "--out", out,
               "--model-out", model_path])
    assert rc == 0
    assert os.path.isfile(model_path)
    model = RegressorModel.load(model_path)
    assert model.net.mlp.sizes[1] == 16

    eval_csv = os.path.join(out, "estimator_eval.csv")
    lines = read_csv_lines(eval_csv)
    assert lines[0] == "axis,rms,oracle_rms,pearson_vs_oracle"
    assert [line.split(",")[0] for line in lines[1:1 + len(AXIS_NAMES)]] \
        == AXIS_NAMES

    manifest, _ = load_manifest(out, "train-estimator")
    assert manifest["config"]["est_steps"] == 60
    assert manifest["config"]["est_hidden"] == [16]

    second_csv = os.path.join(out, "eval_again.csv")
    rc = main(["eval-estimator", "--model", model_path, "--data", val_npz,
               "--out", out, "--out-csv", second_csv])
    assert rc == 0
    lines = read_csv_lines(second_csv)
    assert lines[0] == "axis,rms,oracle_rms,pearson_vs_oracle"
    # The oracle column reports the impedance-inversion residual and must
    # be tiny no matter how undertrained the model is.
    for line in lines[1:4]:
        assert float(line.split(",")[2]) < 0.1


def test_bc_pipeline_and_replay(tmp_path):
    out = str(tmp_path)
    demos = os.path.join(out, "demos")
    rc = main(["record-expert", "--task", "wipe-wall", "--episodes", "2",
               "--seed", "0", "--out", out, "--demos-out", demos])
    assert rc == 0
    paths = sorted(p for p in os.listdir(demos)
                   if p.endswith(".episode.jsonl"))
    assert len(paths) == 2

    force_bin = os.path.join(out, "bc_f.bin")
    rc = main(["train-bc", "--demos", demos, "--steps", "40",
               "--out", out, "--model-out", force_bin])
    assert rc == 0
    assert BCPolicy.load(force_bin).include_force is True

    pos_bin = os.path.join(out, "bc_p.bin")
    rc = main(["train-bc", "--demos", demos, "--steps", "40",
               "--position-only", "--out", out, "--model-out", pos_bin])
    assert rc == 0
    assert BCPolicy.load(pos_bin).include_force is False

    rc = main(["replay", os.path.join(demos, paths[0]), "--out", out])
    assert rc == 0


def test_train_bc_without_demos(tmp_path, capsys):
    empty = tmp_path / "none"
    empty.mkdir()
    rc = main(["train-bc", "--demos", str(empty), "--out", str(tmp_path)])
    assert rc == 1
    assert "no episode files" in capsys.readouterr().err


def test_config_file_applies(tmp_path):
    cfg_yaml = tmp_path / "run.yaml"
    cfg_yaml.write_text("track_steps: 700\nseed: 9\n"
                        f"out_dir: {tmp_path}\n")
    rc = main(["track-eval", "--config", str(cfg_yaml)])
    assert rc == 0
    manifest, _ = load_manifest(str(tmp_path), "track-eval")
    assert manifest["config"]["track_steps"] == 700
    assert manifest["seed"] == 9
    lines = read_csv_lines(os.path.join(str(tmp_path), "tracking_eval.csv"))
    assert all(line.startswith("9,") for line in lines[1:])


def test_config_file_rejects_unknown_key(tmp_path):
    cfg_yaml = tmp_path / "bad.yaml"
    cfg_yaml.write_text("not_a_field: 1\n")
    with pytest.raises(ValueError, match="unknown config key"):
        main(["track-eval", "--config", str(cfg_yaml), "--steps", "60"])


def test_out_dir_from_environment(tmp_path, monkeypatch):
    target = tmp_path / "envout"
    monkeypatch.setenv("FORCESIM_OUT", str(target))
    monkeypatch.chdir(tmp_path)
    assert main(["demo-mode", "--mode", "kick"]) == 0
    assert (target / "demo_kick.csv").is_file()
