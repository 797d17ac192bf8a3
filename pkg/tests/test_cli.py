import csv
import json

import numpy as np
import pytest

from higflow import cli, dataio
from higflow.config import ConfigError, RunConfig, parse_config
from higflow.hierarchy import HiGFlowModel, save_checkpoint

FAST = ["--synthetic-length", "240", "--synthetic-vars", "3", "--hidden", "8", "--heads", "2",
        "--readout-hidden", "8", "--t-out", "4", "--figures", "false"]


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


# ------------------------------------------------------------ config

def test_empty_file_gives_defaults(tmp_path):
    (tmp_path / "c.cfg").write_text("")
    cfg = parse_config(tmp_path / "c.cfg")
    assert (cfg.t_in, cfg.t_out, cfg.lr) == (3, 12, 5e-4)


def test_flag_beats_file(tmp_path):
    (tmp_path / "c.cfg").write_text("depth = 1\nhidden = 8\n")
    cfg = parse_config(tmp_path / "c.cfg", {"depth": "2"})
    assert cfg.depth == 2 and cfg.hidden == 8


def test_tau_out_of_range():
    with pytest.raises(ConfigError, match=r"tau.*\(0, 1\]"):
        parse_config(None, {"tau": "1.5"})


def test_unknown_key(tmp_path):
    (tmp_path / "c.cfg").write_text("colour = red\n")
    with pytest.raises(ConfigError, match="colour"):
        parse_config(tmp_path / "c.cfg")


def test_type_mismatch():
    with pytest.raises(ConfigError, match="epochs"):
        parse_config(None, {"epochs": "many"})


def test_snapshot_round_trips(tmp_path):
    cfg = parse_config(None, {"depth": "3", "tau": "0.1", "figures": "false"})
    (tmp_path / "snap.cfg").write_text(cfg.dumps())
    assert parse_config(tmp_path / "snap.cfg") == cfg


def test_output_root_env(monkeypatch, tmp_path):
    monkeypatch.setenv("HIGFLOW_OUTPUT_ROOT", str(tmp_path))
    assert RunConfig(seed=4).resolved_out_dir("train") == tmp_path / "train-seed4"


# ------------------------------------------------------------ train / eval

def test_train_writes_run_directory(capsys, tmp_path):
    out = tmp_path / "run"
    code, stdout, _ = run(capsys, "train", "--epochs", "2", "--out-dir", str(out), *FAST[:-2])
    assert code == 0
    for name in ("checkpoint.json", "metrics.csv", "config.txt", "energy.json",
                 "test_metrics.json", "training_curves.png", "level_energy.png"):
        assert (out / name).exists(), name
    rows = list(csv.DictReader((out / "metrics.csv").open()))
    assert [r["epoch"] for r in rows] == ["1", "2"]
    assert json.loads(stdout)["epochs_run"] == 2


def test_train_zero_epochs(capsys, tmp_path):
    out = tmp_path / "run"
    code, _, _ = run(capsys, "train", "--epochs", "0", "--out-dir", str(out), *FAST)
    assert code == 0
    assert (out / "metrics.csv").read_text() == "epoch,train_loss,val_mae,val_rmse\n"
    cfg = parse_config(out / "config.txt")
    fresh = HiGFlowModel(cfg.model_config(3))
    doc = json.loads((out / "checkpoint.json").read_text())
    for name, p in fresh.named_parameters().items():
        assert np.array_equal(np.array(doc["params"][name]["values"]).reshape(p.shape), p.data)


def test_train_is_byte_reproducible(capsys, tmp_path):
    for d in ("a", "b"):
        assert run(capsys, "train", "--epochs", "2", "--out-dir", str(tmp_path / d), *FAST)[0] == 0
    assert (tmp_path / "a/metrics.csv").read_bytes() == (tmp_path / "b/metrics.csv").read_bytes()


def test_eval_matches_train(capsys, tmp_path):
    out = tmp_path / "run"
    _, stdout, _ = run(capsys, "train", "--epochs", "1", "--out-dir", str(out), *FAST)
    trained = json.loads(stdout)
    code, stdout, _ = run(capsys, "eval", "--checkpoint", str(out / "checkpoint.json"), *FAST)
    assert code == 0
    ev = json.loads(stdout)
    assert ev["test_mae"] == trained["test_mae"] and ev["test_rmse"] == trained["test_rmse"]


def test_eval_zero_checkpoint_is_mean_abs_target(capsys, tmp_path):
    cfg = parse_config(None, {k.lstrip("-").replace("-", "_"): v for k, v in zip(FAST[::2], FAST[1::2])})
    model = HiGFlowModel(cfg.model_config(3))
    for p in model.parameters():
        p.data[:] = 0.0
    save_checkpoint(model, tmp_path / "zero.json")
    code, stdout, _ = run(capsys, "eval", "--checkpoint", str(tmp_path / "zero.json"), *FAST)
    assert code == 0
    split = dataio.prepare(cli.load_dataset(cfg), cfg.t_in, cfg.t_out)
    expected = float(np.mean([np.abs(s.target) for s in split.test]))
    assert abs(json.loads(stdout)["test_mae"] - expected) < 1e-12


def test_eval_corrupted_checkpoint(capsys, tmp_path):
    (tmp_path / "bad.json").write_text('{"format": "higflow-checkpoint", "version": 1, "params": {')
    code, _, err = run(capsys, "eval", "--checkpoint", str(tmp_path / "bad.json"), *FAST)
    assert code != 0 and err.startswith("higflow-error:") and err.count("\n") == 1


def test_bad_config_single_line(capsys):
    code, _, err = run(capsys, "train", "--tau", "1.5")
    assert code != 0
    assert err.strip() == "higflow-error: config: tau=1.5 out of range; legal range in (0, 1]"


def test_missing_dataset(capsys, tmp_path):
    code, _, err = run(capsys, "train", "--dataset", str(tmp_path / "none.csv"))
    assert code != 0 and "higflow-error: io" in err


def test_csv_dataset(capsys, tmp_path):
    raw = dataio.synthetic_series(3, 240, seed=5)
    dataio.save_series(raw, tmp_path / "s.csv")
    code, stdout, _ = run(capsys, "train", "--dataset", str(tmp_path / "s.csv"), "--epochs", "1",
                          "--out-dir", str(tmp_path / "r"), *FAST[4:])
    assert code == 0 and np.isfinite(json.loads(stdout)["test_mae"])


# ------------------------------------------------------------ analyze / sweep / gen

def test_analyze_single_trial_reproducible(capsys, tmp_path):
    args = ["--theorem1-trials", "1", "--theorem2-trials", "1", "--theorem3-trials", "1"]
    for d in ("a", "b"):
        assert run(capsys, "analyze", "--out-dir", str(tmp_path / d), *args)[0] == 0
    assert (tmp_path / "a/report.csv").read_bytes() == (tmp_path / "b/report.csv").read_bytes()
    summary = json.loads((tmp_path / "a/analysis.json").read_text())
    assert set(summary["theorem2"]["median_gap"]) == {"1", "2", "4", "8"}
    assert (tmp_path / "a/theorem2_gap.png").exists()


def test_sweep_single_value(capsys, tmp_path):
    code, _, _ = run(capsys, "sweep", "--axis", "depth", "--values", "2", "--epochs", "1",
                     "--out-dir", str(tmp_path / "s"), *FAST)
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "s/sweep.csv").open()))
    assert len(rows) == 1 and rows[0]["axis_value"] == "2"
    assert len(rows[0]["energy_h"].split(";")) == 2


def test_sweep_horizon_rows(capsys, tmp_path):
    fast = [a for a in FAST]
    i = fast.index("--t-out")
    del fast[i:i + 2]
    code, _, _ = run(capsys, "sweep", "--axis", "horizon", "--values", "3,6,9,12", "--epochs", "1",
                     "--out-dir", str(tmp_path / "s"), *fast)
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "s/sweep.csv").open()))
    assert [int(r["axis_value"]) for r in rows] == [3, 6, 9, 12]


def test_sweep_rejects_out_of_range(capsys):
    code, _, err = run(capsys, "sweep", "--axis", "transition_depth", "--values", "4")
    assert code != 0 and "transition_depth=4" in err


def test_gen_synthetic(capsys, tmp_path):
    code, _, _ = run(capsys, "gen-synthetic", "--output", str(tmp_path / "g.csv"),
                     "--synthetic-length", "30", "--synthetic-vars", "4")
    assert code == 0
    raw = dataio.load_series(tmp_path / "g.csv")
    assert (raw.n_vars, raw.length) == (4, 30)


def test_report_schemas(capsys, tmp_path):
    run(capsys, "train", "--epochs", "1", "--out-dir", str(tmp_path / "t"), *FAST)
    run(capsys, "analyze", "--out-dir", str(tmp_path / "a"), "--theorem1-trials", "1",
        "--theorem2-trials", "1", "--theorem3-trials", "1", "--figures", "false")
    run(capsys, "sweep", "--axis", "depth", "--values", "1", "--epochs", "1",
        "--out-dir", str(tmp_path / "s"), *FAST)

    def header(path):
        return (tmp_path / path).read_text().splitlines()[0].split(",")
    assert header("t/metrics.csv") == cli.METRICS_COLUMNS
    assert header("a/report.csv") == cli.REPORT_COLUMNS
    assert header("s/sweep.csv") == cli.SWEEP_COLUMNS


def test_usage_error_single_line(capsys):
    code, _, err = run(capsys, "train", "--no-such-flag")
    assert code == 2 and err.startswith("higflow-error: usage:") and err.count("\n") == 1
