"""End-to-end CLI runs through main(): exit codes, artifacts on disk, and
byte-identical reruns.  Everything runs at smoke scale."""

import csv
import json

import numpy as np
import pytest

from fdmsde.cli import EXIT_CHECK_FAILED, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from fdmsde.data_io import load_paths
from fdmsde.processes import ou, simulate_exact
from fdmsde.sde import load_checkpoint
from fdmsde.data_io import save_paths

SMALL_SDE = [
    "--set", "sde.num_steps=7",
    "--set", "sde.d_z=2",
    "--set", "sde.d_noise=1",
    "--set", "sde.hidden_sizes=[4]",
]


def write_ou_paths(path, n=64, n_times=8, seed=0):
    batch = simulate_exact(ou(), np.linspace(0, 1, n_times), n, seed)
    save_paths(batch, path)
    return batch


def run_train(tmp_path, data, out, extra=()):
    return main([
        "train", "--data", str(data), "--out", str(out),
        "--set", "train.steps=2", "--set", "train.batch_size=8",
        "--set", "train.log_every=1", "--set", "train.checkpoint_every=1",
        *SMALL_SDE, "--seed", "0", *extra,
    ])


# ---------------------------------------------------------------------------
# usage errors


def test_missing_config_file_names_path(tmp_path, capsys):
    code = main(["train", "--config", str(tmp_path / "nope.json"),
                 "--data", str(tmp_path / "d.csv"), "--out", str(tmp_path)])
    assert code == EXIT_USAGE
    assert "nope.json" in capsys.readouterr().err


def test_missing_data_file(tmp_path, capsys):
    code = main(["train", "--data", str(tmp_path / "absent.csv"), "--out", str(tmp_path)])
    assert code == EXIT_USAGE
    assert "absent.csv" in capsys.readouterr().err


def test_unknown_config_key_rejected(tmp_path, capsys):
    data = tmp_path / "d.csv"
    write_ou_paths(data)
    code = main(["train", "--data", str(data), "--out", str(tmp_path / "o"),
                 "--set", "train.warp_speed=1"])
    assert code == EXIT_USAGE
    assert "warp_speed" in capsys.readouterr().err


def test_bad_checkpoint_rejected(tmp_path, capsys):
    ckpt = tmp_path / "c.json"
    ckpt.write_text("{}")
    code = main(["generate", "--checkpoint", str(ckpt), "--count", "1",
                 "--out", str(tmp_path / "g.csv")])
    assert code == EXIT_USAGE


# ---------------------------------------------------------------------------
# train


def test_train_smoke_writes_artifacts(tmp_path, capsys):
    data = tmp_path / "d.csv"
    write_ou_paths(data)
    out = tmp_path / "run"
    assert run_train(tmp_path, data, out) == EXIT_OK
    assert (out / "checkpoint.json").exists()
    assert (out / "train_log.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 0
    assert manifest["config"]["train"]["steps"] == 2
    assert manifest["finished"] is not None
    with open(out / "train_log.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["step"]) for r in rows] == [0, 1]
    # the reloaded checkpoint matches the declared model
    _, cfg = load_checkpoint(out / "checkpoint.json")
    assert cfg.num_steps == 7


def test_train_repeat_is_byte_identical(tmp_path):
    data = tmp_path / "d.csv"
    write_ou_paths(data)
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert run_train(tmp_path, data, out1) == EXIT_OK
    assert run_train(tmp_path, data, out2) == EXIT_OK
    assert (out1 / "checkpoint.json").read_bytes() == (out2 / "checkpoint.json").read_bytes()
    # logs agree except for the wall-clock column
    for f1, f2 in [(out1 / "train_log.csv", out2 / "train_log.csv")]:
        with open(f1) as a, open(f2) as b:
            for r1, r2 in zip(csv.DictReader(a), csv.DictReader(b)):
                assert (r1["step"], r1["score"], r1["grad_norm"]) == (
                    r2["step"], r2["score"], r2["grad_norm"])


def test_train_accepts_raw_series_csv(tmp_path):
    f = tmp_path / "series.csv"
    rng = np.random.default_rng(0)
    with open(f, "w") as fh:
        fh.write("date,price\n")
        for i, v in enumerate(rng.normal(size=120).cumsum()):
            fh.write(f"r{i},{float(v)!r}\n")
    out = tmp_path / "run"
    code = main([
        "train", "--data", str(f), "--out", str(out),
        "--set", 'data.feature_columns=["price"]',
        "--set", "data.window=8", "--set", "data.stride=8",
        "--set", "train.steps=1", "--set", "train.batch_size=8",
        *SMALL_SDE,
    ])
    assert code == EXIT_OK
    assert (out / "checkpoint.json").exists()


# ---------------------------------------------------------------------------
# generate


def trained_checkpoint(tmp_path):
    data = tmp_path / "d.csv"
    write_ou_paths(data)
    out = tmp_path / "run"
    assert run_train(tmp_path, data, out) == EXIT_OK
    return out / "checkpoint.json"


def test_generate_writes_paths(tmp_path):
    ckpt = trained_checkpoint(tmp_path)
    out = tmp_path / "gen.csv"
    assert main(["generate", "--checkpoint", str(ckpt), "--count", "5",
                 "--out", str(out), "--seed", "3"]) == EXIT_OK
    batch = load_paths(out)
    assert batch.n_paths == 5
    assert batch.n_times == 8


def test_generate_zero_count_header_only(tmp_path):
    ckpt = trained_checkpoint(tmp_path)
    out = tmp_path / "gen.csv"
    assert main(["generate", "--checkpoint", str(ckpt), "--count", "0",
                 "--out", str(out)]) == EXIT_OK
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 1
    assert lines[0].startswith("path_id,t,dim_0")


def test_generate_negative_count_rejected(tmp_path, capsys):
    ckpt = trained_checkpoint(tmp_path)
    code = main(["generate", "--checkpoint", str(ckpt), "--count", "-1",
                 "--out", str(tmp_path / "g.csv")])
    assert code == EXIT_USAGE


# ---------------------------------------------------------------------------
# evaluate


def test_evaluate_writes_report(tmp_path, capsys):
    ckpt = trained_checkpoint(tmp_path)
    heldout = tmp_path / "held.csv"
    write_ou_paths(heldout, n=128, seed=5)
    out = tmp_path / "eval"
    code = main(["evaluate", "--checkpoint", str(ckpt), "--data", str(heldout),
                 "--out", str(out), "--batch-size", "32", "--num-batches", "3"])
    assert code == EXIT_OK
    assert (out / "ks_report.csv").exists()
    assert (out / "joint_scatter.csv").exists()
    assert "mean KS" in capsys.readouterr().out


def test_evaluate_bad_index_rejected(tmp_path, capsys):
    ckpt = trained_checkpoint(tmp_path)
    heldout = tmp_path / "held.csv"
    write_ou_paths(heldout, n=64, seed=5)
    code = main(["evaluate", "--checkpoint", str(ckpt), "--data", str(heldout),
                 "--out", str(tmp_path / "eval"), "--eval-indices", "99"])
    assert code == EXIT_USAGE
    assert "99" in capsys.readouterr().err


def test_evaluate_grid_mismatch_rejected(tmp_path, capsys):
    ckpt = trained_checkpoint(tmp_path)
    heldout = tmp_path / "held.csv"
    write_ou_paths(heldout, n=32, n_times=5, seed=5)
    code = main(["evaluate", "--checkpoint", str(ckpt), "--data", str(heldout),
                 "--out", str(tmp_path / "eval")])
    assert code == EXIT_USAGE


# ---------------------------------------------------------------------------
# verify


def test_verify_properness_passes(tmp_path, capsys):
    out = tmp_path / "ver"
    code = main(["verify", "--which", "properness", "--out", str(out),
                 "--trials", "40", "--batch-size", "64", "--grid-points", "17"])
    assert code == EXIT_OK
    text = capsys.readouterr().out
    assert "PASS" in text
    assert (out / "properness_drift-mismatch.csv").exists()
    assert (out / "properness_diffusion-mismatch.csv").exists()


def test_verify_sensitivity_smoke(tmp_path, capsys):
    out = tmp_path / "ver"
    code = main(["verify", "--which", "sensitivity", "--out", str(out),
                 "--trials", "20", "--batch-size", "32", "--grid-points", "17"])
    assert code in (EXIT_OK, EXIT_CHECK_FAILED)
    assert (out / "sensitivity.csv").exists()


# ---------------------------------------------------------------------------
# synth


def test_synth_ou_dataset(tmp_path):
    out = tmp_path / "ou.csv"
    code = main(["synth", "--process", "ou", "--count", "10", "--out", str(out),
                 "--grid-points", "16", "--rate", "1.0", "--scale", "0.5", "--seed", "1"])
    assert code == EXIT_OK
    batch = load_paths(out)
    assert batch.values.shape == (10, 16, 1)


def test_synth_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["synth", "--process", "brownian", "--count", "4", "--grid-points", "8", "--seed", "7"]
    assert main(args + ["--out", str(a)]) == EXIT_OK
    assert main(args + ["--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


def test_synth_rejects_bad_params(tmp_path, capsys):
    code = main(["synth", "--process", "gbm", "--count", "2", "--x0", "-1.0",
                 "--out", str(tmp_path / "g.csv")])
    assert code == EXIT_USAGE
