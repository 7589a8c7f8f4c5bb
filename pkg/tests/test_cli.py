import csv
import json

import numpy as np
import pytest

from dalbt import active_loop as al
from dalbt.cli import main, toy_gradcheck
from dalbt.metrics import CURVE_COLUMNS, RECORD_FIELDS, compare_metrics, read_metrics

CONFIG = {
    "dataset": {"kind": "synth_blobs", "num_classes": 3, "dim": 6, "per_class": 40, "test_per_class": 10},
    "ood": [{"kind": "synth_blobs", "count": 20}],
    "arch": {"hidden": [16], "latent_dim": 8, "projector": [8]},
    "train": {"epochs": 3, "batch_size": 16},
    "splits": {"initial_labeled": 12},
    "stages": 4,
    "budget": 8,
    "seeds": [0, 1],
}


@pytest.fixture
def config_path(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(CONFIG))
    return p


def test_run_writes_run_directory(tmp_path, config_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--config", str(config_path), "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "complete"
    assert set(manifest["metrics_paths"]) == {"0", "1"}
    recs = read_metrics(out / "metrics_seed0.jsonl")
    assert [r["stage"] for r in recs] == [0, 1, 2, 3]
    assert list(recs[0]) == list(RECORD_FIELDS)
    assert "stage   3" in capsys.readouterr().out


def test_run_is_deterministic_with_one_thread(tmp_path, config_path, monkeypatch):
    monkeypatch.setenv("DALBT_THREADS", "1")
    for name in ("a", "b"):
        assert main(["run", "--config", str(config_path), "--out", str(tmp_path / name)]) == 0
    for seed in (0, 1):
        f = f"metrics_seed{seed}.jsonl"
        assert compare_metrics(tmp_path / "a" / f, tmp_path / "b" / f)


def test_seed_override(tmp_path, config_path):
    out = tmp_path / "r"
    assert main(["run", "--config", str(config_path), "--out", str(out), "--seed-override", "7"]) == 0
    assert [p.name for p in out.glob("metrics_seed*.jsonl")] == ["metrics_seed7.jsonl"]


def test_crash_keeps_finished_stages(tmp_path, config_path, monkeypatch):
    real = al.run_stage

    def flaky(pool, params, oracle, ctx):
        if pool.stage == 3 and ctx.seed == 0:
            raise RuntimeError("simulated crash")
        return real(pool, params, oracle, ctx)

    monkeypatch.setattr(al, "run_stage", flaky)
    out = tmp_path / "crash"
    assert main(["run", "--config", str(config_path), "--out", str(out)]) == 1
    assert len(read_metrics(out / "metrics_seed0.jsonl")) == 3
    assert len(read_metrics(out / "metrics_seed1.jsonl")) == 4
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "partial"
    assert "simulated crash" in manifest["failures"]["0"]


def test_bad_config_exits_2(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"train": {"batch_size": 1}}))
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "cross-correlation" in capsys.readouterr().err


def test_export_curves(tmp_path, config_path):
    out = tmp_path / "run"
    main(["run", "--config", str(config_path), "--out", str(out)])
    csv_path = tmp_path / "curves.csv"
    assert main(["export-curves", "--runs", str(out), "--out", str(csv_path)]) == 0
    with open(csv_path) as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == CURVE_COLUMNS
    assert len(rows) == 4
    accs = [r["test_accuracy"] for s in (0, 1) for r in read_metrics(out / f"metrics_seed{s}.jsonl") if r["stage"] == 2]
    assert float(rows[2]["mean_acc"]) == np.mean(accs)
    assert float(rows[2]["std_acc"]) == pytest.approx(np.std(accs, ddof=1))
    assert main(["export-curves", "--runs", str(tmp_path / "nothing"), "--out", str(csv_path)]) == 1


def test_gradcheck_command(capsys):
    assert main(["gradcheck"]) == 0
    line = capsys.readouterr().out
    assert float(line.split()[-1]) < 1e-4
    assert toy_gradcheck(gamma=0.0) < 1e-4


def test_fit_weibull_command(tmp_path, capsys):
    x = 1.5 * np.random.default_rng(0).weibull(2.0, 5000)
    p = tmp_path / "d.csv"
    p.write_text("distance\n" + "\n".join(repr(float(v)) for v in x) + "\n")
    assert main(["fit-weibull", "--input", str(p), "--tau", "0"]) == 0
    fields = dict(kv.split("=") for kv in capsys.readouterr().out.split())
    assert float(fields["tau"]) == 0.0
    assert abs(float(fields["kappa"]) - 2.0) < 0.1
    assert abs(float(fields["lambda"]) - 1.5) < 0.05
    p.write_text("1.0\nabc\n")
    assert main(["fit-weibull", "--input", str(p)]) == 2
