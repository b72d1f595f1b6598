import json
import subprocess
import sys

import numpy as np
import pytest

from dsarrivals.cli import main
from dsarrivals.core import read_counts_csv, read_epochs_csv

TOY = {"seed": 5, "horizon": {"T": 4, "p": 8},
       "synth": {"model": "pgnorta",
                 "pgnorta": {"base_rates": [20, 30, 40, 50, 50, 40, 30, 20], "alphas": 6,
                             "rho": 0.7}}}


@pytest.fixture
def toy_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(TOY))
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


def test_synth_cir_shape_and_determinism(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run("synth", "--model", "cir", "--days", 300, "--seed", 3, "--out", a) == 0
    assert run("synth", "--model", "cir", "--days", 300, "--seed", 3, "--out", b) == 0
    X = read_counts_csv(a)
    assert X.shape == (300, 22)
    assert a.read_bytes() == b.read_bytes()
    meta = json.loads((tmp_path / "a.csv.meta.json").read_text())
    assert meta["seed"] == 3 and meta["command"] == "synth" and "config_hash" in meta


def test_synth_zero_days_fails(tmp_path, capsys):
    assert run("synth", "--model", "cir", "--days", 0, "--out", tmp_path / "x.csv") != 0
    assert "--days" in capsys.readouterr().err


def test_synth_cir_epochs(tmp_path):
    out, ep = tmp_path / "c.csv", tmp_path / "ep"
    assert run("synth", "--model", "cir", "--days", 3, "--out", out, "--epochs-dir", ep) == 0
    X = read_counts_csv(out)
    for i in range(3):
        epochs = read_epochs_csv(ep / f"day_{i + 1:05d}.csv")
        assert epochs.size == X[i].sum()


def test_pgnorta_needs_config_block(tmp_path):
    assert run("synth", "--model", "pgnorta", "--days", 5, "--out", tmp_path / "x.csv") != 0


def test_pipeline_end_to_end(tmp_path, toy_config):
    raw, clean, train = tmp_path / "raw.csv", tmp_path / "clean.csv", tmp_path / "train.csv"
    model, samp, summ = tmp_path / "model.json", tmp_path / "s.csv", tmp_path / "summary.csv"
    assert run("synth", "--config", toy_config, "--days", 300, "--out", raw) == 0
    assert run("clean", "--data", raw, "--out", clean, "--removed", tmp_path / "rm.txt") == 0
    assert run("split", "--data", clean, "--out", train, "--seed", 1) == 0
    n_clean = read_counts_csv(clean).shape[0]
    assert read_counts_csv(train).shape[0] == -(-2 * n_clean // 3)
    assert (tmp_path / "train.test.csv").exists()
    assert run("train", "--config", toy_config, "--data", train, "--out", model,
               "--hidden", "16,16", "--iterations", 30, "--batch-size", 32) == 0
    assert run("sample", "--model", model, "--days", 200, "--seed", 2, "--out", samp) == 0
    S = read_counts_csv(samp)
    assert S.shape == (200, 8)
    assert run("stats", "--data", samp, "--out", summ) == 0
    lines = summ.read_text().splitlines()
    assert lines[0] == "statistic,index,value,flag" and len(lines) == 1 + 8 + 8 + 7
    for path in (raw, clean, train, model, samp, summ):
        assert (tmp_path / (path.name + ".meta.json")).exists()
    # epochs and queue on the generated sample
    ep = tmp_path / "ep"
    assert run("epochs", "--counts", samp, "--mode", "pwl", "--T", 4, "--out-dir", ep) == 0
    svc = ("--service-mean", 0.2, "--service-var", 0.1, "--T", 4, "--p", 8, "--macro-reps", 10)
    assert run("queue", "--epochs-dir", ep, "--mode", "infinite", *svc,
               "--out", tmp_path / "q.csv") == 0
    assert run("queue", "--epochs-dir", ep, "--mode", "many", "--servers", 5, *svc,
               "--out", tmp_path / "q2.csv") == 0
    assert (tmp_path / "q2.csv").read_text().startswith("interval,statistic,value,ci_lo,ci_hi")


def test_sample_scale_shifts_mean(tmp_path, toy_config):
    raw, model = tmp_path / "raw.csv", tmp_path / "model.json"
    assert run("synth", "--config", toy_config, "--days", 200, "--out", raw) == 0
    assert run("train", "--config", toy_config, "--data", raw, "--out", model,
               "--hidden", "16,16", "--iterations", 50, "--batch-size", 32) == 0
    base, up = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run("sample", "--model", model, "--days", 20000, "--seed", 1, "--out", base) == 0
    assert run("sample", "--model", model, "--days", 20000, "--seed", 1, "--out", up,
               "--scale", 1.2) == 0
    ratio = read_counts_csv(up).sum() / read_counts_csv(base).sum()
    assert ratio == pytest.approx(1.2, abs=0.02)


def test_missing_model_is_clean_error(tmp_path, capsys):
    code = run("sample", "--model", tmp_path / "nope.json", "--days", 3,
               "--out", tmp_path / "s.csv")
    assert code != 0
    err = capsys.readouterr().err
    assert "error" in err and "Traceback" not in err


def test_malformed_csv_names_location(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2,3\n4,x,6\n")
    assert run("stats", "--data", bad, "--out", tmp_path / "s.csv") != 0
    assert "row 2, column 2" in capsys.readouterr().err
    bad.write_text("1,2,3\n4,5\n")
    assert run("stats", "--data", bad, "--out", tmp_path / "s.csv") != 0
    assert "row 2" in capsys.readouterr().err


def test_flags_override_config(tmp_path, toy_config):
    out = tmp_path / "x.csv"
    assert run("synth", "--config", toy_config, "--days", 4, "--seed", 9, "--out", out) == 0
    meta = json.loads((tmp_path / "x.csv.meta.json").read_text())
    assert meta["seed"] == 9 and meta["settings"]["days"] == 4


def test_module_entry_point(tmp_path):
    out = tmp_path / "x.csv"
    proc = subprocess.run([sys.executable, "-m", "dsarrivals", "synth", "--model", "cir",
                           "--days", "2", "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert np.asarray(read_counts_csv(out)).shape == (2, 22)
