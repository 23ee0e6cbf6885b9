import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from hankelwave.cli import main
from hankelwave.config import posture_config
from hankelwave.ingest import load_trace, save_trace, synthesize_braking_trace
from hankelwave.subspace_trainer import load_dictionary

SHORT_EVAL = json.dumps([{"name": "short", "kind": "posture", "seed": 9,
                          "script": [0, 3, 0, 1]}])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def posture_dictionary(tmp_path_factory):
    out = tmp_path_factory.mktemp("train") / "posture.npz"
    report = out.parent / "report"
    assert main(["train", "--preset", "posture", "--out", str(out),
                 "--report", str(report)]) == 0
    return out


def test_train_writes_dictionary_and_sidecar(posture_dictionary):
    d = load_dictionary(posture_dictionary)
    assert d.n_classes == 13
    sidecar = json.loads((posture_dictionary.parent / "posture.npz.json").read_text())
    assert len(sidecar["schedule"]["runs"]) == len(posture_config().training)
    assert (posture_dictionary.parent / "report" / "dictionary.png").stat().st_size > 0


def test_simulate_single_braking_file(tmp_path):
    scenario = tmp_path / "s.json"
    scenario.write_text(json.dumps([{"state": "cruise", "duration_s": 2},
                                    {"state": "sudden", "duration_s": 2}]))
    out = tmp_path / "ride.csv"
    assert main(["simulate", "--scenario", str(scenario), "--seed", "4", "--out", str(out)]) == 0
    lt = load_trace(out, 20.0, labeled=True)
    assert len(lt) == 80 and set(lt.labels.tolist()) == {0, 2}


def test_simulate_config_runs(tmp_path):
    assert main(["simulate", "--preset", "posture", "--which", "evaluation",
                 "--out", str(tmp_path)]) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert len(manifest) == 6
    assert all((tmp_path / m["file"]).exists() for m in manifest)


def test_filter_columns_and_plot(tmp_path):
    lt = synthesize_braking_trace([("cruise", 3), ("normal", 3)], seed=2)
    save_trace(lt, tmp_path / "in.csv")
    out, png = tmp_path / "f.csv", tmp_path / "f.png"
    assert main(["filter", str(tmp_path / "in.csv"), "--labeled", "--out", str(out),
                 "--plot", str(png)]) == 0
    rows = read_csv(out)
    assert rows[0][:3] == ["t", "roll", "pitch"]
    assert len(rows) == len(lt) + 1
    assert png.stat().st_size > 0


def test_filter_rejects_posture_trace(tmp_path):
    assert main(["simulate", "--script", "0,1", "--out", str(tmp_path / "p.csv")]) == 0
    assert main(["filter", str(tmp_path / "p.csv"), "--labeled", "--out",
                 str(tmp_path / "f.csv")]) == 3


def test_classify_rows(tmp_path, posture_dictionary):
    assert main(["simulate", "--script", "0,2,0", "--seed", "1",
                 "--out", str(tmp_path / "p.csv")]) == 0
    out, plot = tmp_path / "r.csv", tmp_path / "plot.csv"
    assert main(["classify", str(tmp_path / "p.csv"), "--preset", "posture", "--labeled",
                 "--dictionary", str(posture_dictionary), "--out", str(out),
                 "--plot-data", str(plot)]) == 0
    rows = read_csv(out)
    n = len(load_trace(tmp_path / "p.csv", 20.0, labeled=True))
    assert rows[0] == ["t_end", "label", *(f"r_{i}" for i in range(13)), "margin", "converged"]
    assert len(rows) - 1 == n - 10 + 1
    assert len(read_csv(plot)) == n + 1


def test_evaluate_report(tmp_path, posture_dictionary):
    report = tmp_path / "rep"
    assert main(["evaluate", "--preset", "posture", "--dictionary", str(posture_dictionary),
                 "--set", f"evaluation={SHORT_EVAL}", "--report", str(report)]) == 0
    summary = json.loads((report / "summary.json").read_text())
    assert summary["runs"] == ["short"]
    assert summary["lenient_accuracy"] >= 0.9
    for name in ("confusion.csv", "confusion_lenient.csv", "runs.csv", "misclassified.csv",
                 "confusion.png", "confusion_lenient.png", "short_labels.png",
                 "plot_data/short.csv"):
        assert (report / name).exists(), name
    cm = np.array([r[1:] for r in read_csv(report / "confusion.csv")[1:]], dtype=int)
    assert cm.sum() == summary["total"]


def test_dictionary_config_mismatch_is_config_error(tmp_path, posture_dictionary):
    lt = synthesize_braking_trace([("cruise", 3)], seed=0)
    save_trace(lt, tmp_path / "b.csv")
    assert main(["classify", str(tmp_path / "b.csv"), "--labeled",
                 "--dictionary", str(posture_dictionary), "--out", str(tmp_path / "r.csv")]) == 2


@pytest.mark.parametrize("argv", [
    ["train", "--out", "x.npz", "--set", "w=1"],
    ["train", "--out", "x.npz", "--set", "nonsense=3"],
    ["train", "--out", "x.npz", "--set", "novalue"],
    ["train", "--out", "x.npz", "--config", "missing.json"],
    ["train", "--out", "x.npz", "--threads", "0"],
])
def test_configuration_errors(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2


def test_data_errors(tmp_path):
    assert main(["filter", str(tmp_path / "absent.csv"), "--out", str(tmp_path / "o.csv")]) == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("0,0,0,9.8,0,0,0\n0.3,0,0,9.8,0,0,0\n")
    assert main(["filter", str(bad), "--out", str(tmp_path / "o.csv")]) == 3


def test_training_failure_is_data_error(tmp_path):
    # a single run cannot populate all thirteen classes
    one = posture_config().training[:1]
    assert main(["train", "--preset", "posture", "--set", f"training={json.dumps(one)}",
                 "--out", str(tmp_path / "d.npz")]) == 3


def test_config_file_with_overrides(tmp_path):
    cfg = posture_config()
    cfg.save(tmp_path / "c.json")
    assert main(["simulate", "--config", str(tmp_path / "c.json"), "--set", "fs=40",
                 "--script", "0,4", "--out", str(tmp_path / "p.csv")]) == 0
    assert load_trace(tmp_path / "p.csv", 40.0, labeled=True).trace.fs == 40.0


def test_module_entry_point_and_thread_variable(tmp_path):
    env = dict(os.environ, HANKELWAVE_THREADS="many")
    proc = subprocess.run([sys.executable, "-m", "hankelwave", "simulate", "--script", "0,1",
                           "--out", str(tmp_path / "p.csv")], env=env, capture_output=True,
                          text=True)
    assert proc.returncode == 2
    assert "HANKELWAVE_THREADS" in proc.stderr
    env["HANKELWAVE_THREADS"] = "1"
    proc = subprocess.run([sys.executable, "-m", "hankelwave", "simulate", "--script", "0,1",
                           "--out", str(tmp_path / "p.csv")], env=env, capture_output=True,
                          text=True)
    assert proc.returncode == 0, proc.stderr
