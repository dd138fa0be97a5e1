import json
import os
import subprocess
import sys

import numpy as np
import pytest

from attackability.cli import main
from attackability.data import SynthSpec, generate
from attackability.metrics import f1_scores

SMALL = ["--n", "200", "--d", "6", "--m", "3", "--rho", "0.6"]


@pytest.fixture
def dataset_csv(tmp_path):
    assert main(["gen-data", *SMALL, "--seed", "7", "--out", str(tmp_path)]) == 0
    return str(tmp_path / "data.csv")


def _train(tmp_path, data, sub, *extra):
    out = tmp_path / sub
    assert main(["train", "--data", data, "--epochs", "15", "--out", str(out), *extra]) == 0
    return out


def test_gen_data_is_byte_identical(tmp_path):
    for sub in ("a", "b"):
        assert main(["gen-data", *SMALL, "--seed", "7", "--out", str(tmp_path / sub)]) == 0
    for name in ("data.csv", "data.meta.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    side = json.loads((tmp_path / "a" / "data.meta.json").read_text())
    assert side["schema_version"] == 1


def test_gen_data_rejects_unorthogonalizable(tmp_path, capsys):
    code = main(["gen-data", "--rho", "0", "--m", "30", "--d", "20", "--out", str(tmp_path)])
    assert code == 2
    assert "cannot orthogonalize" in capsys.readouterr().err


def test_generation_gate_holds_without_noise():
    ds, W = generate(SynthSpec(n=500, d=8, m=4, rho=0.9, label_noise=0.0, seed=1))
    assert f1_scores(np.where(ds.X @ W.T > 0, 1, -1), ds.Y).micro_f1 == 1.0


def test_train_writes_model_and_trace(tmp_path, dataset_csv):
    out = _train(tmp_path, dataset_csv, "m")
    assert json.loads((out / "model.json").read_text())["schema_version"] == 1
    assert (out / "trace.csv").read_text().startswith("epoch,trainLoss,regValue,valMicroF1\n")
    assert json.loads((out / "trace.meta.json").read_text())["schema_version"] == 1


def test_attack_with_zero_budget(tmp_path, dataset_csv):
    out = _train(tmp_path, dataset_csv, "m")
    assert main(["attack", "--data", dataset_csv, "--model-file", str(out / "model.json"),
                 "--epsilon", "0", "--method", "exact", "--out", str(out)]) == 0
    summary = json.loads((out / "attack_summary.json").read_text())
    assert summary["caMean"] == 0.0 and summary["cStarMean"] == 0.0
    lines = (out / "attacks.jsonl").read_text().splitlines()
    assert len(lines) == summary["n"] and json.loads(lines[0])["ca"] == 0


def test_evaluate_perfect_predictions(tmp_path, dataset_csv):
    from attackability.data import load_csv
    ds = load_csv(dataset_csv)
    _, Y = ds.split("test")
    pred = tmp_path / "pred.csv"
    pred.write_text(",".join(f"l{j}" for j in range(ds.m)) + "\n" +
                    "".join(",".join(str(int(v)) for v in row) + "\n" for row in Y))
    assert main(["evaluate", "--data", dataset_csv, "--predictions", str(pred), "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "eval.json").read_text())
    assert report["clean"]["micro_f1"] == 1.0


def test_evaluate_with_model(tmp_path, dataset_csv):
    out = _train(tmp_path, dataset_csv, "m")
    assert main(["evaluate", "--data", dataset_csv, "--model-file", str(out / "model.json"),
                 "--epsilon", "0.5", "--out", str(out)]) == 0
    report = json.loads((out / "eval.json").read_text())
    assert report["attacked"]["micro_f1"] <= report["clean"]["micro_f1"]


def test_sae_drops_after_crushing_l2(tmp_path, dataset_csv):
    means = []
    for sub, extra in (("plain", []), ("crushed", ["--regularizer", "l2", "--lam", "1e8"])):
        out = _train(tmp_path, dataset_csv, sub, *extra)
        assert main(["sae", "--data", dataset_csv, "--model-file", str(out / "model.json"),
                     "--out", str(out)]) == 0
        means.append(json.loads((out / "sae.meta.json").read_text())["saeMean"])
        assert (out / "sae.csv").read_text().startswith("index,phi,subset\n")
    assert means[1] < means[0]


def test_single_point_sweep_flags_correlation(tmp_path, dataset_csv):
    assert main(["sweep", "--data", dataset_csv, "--regularizer", "nuclear", "--grid", "0.1",
                 "--epochs", "5", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "sweep.csv").read_text().splitlines()
    assert len(rows) == 2
    meta = json.loads((tmp_path / "sweep.meta.json").read_text())
    assert "insufficient points" in meta["spearmanSaeCa"]["error"]
    assert not (tmp_path / "sweep.partial.csv").exists()


def test_output_dir_from_environment(tmp_path, monkeypatch):
    target = tmp_path / "env"
    monkeypatch.setenv("ATTACKABILITY_OUTPUT_DIR", str(target))
    assert main(["gen-data", *SMALL, "--out", str(tmp_path / "ignored")]) == 0
    assert (target / "data.csv").exists() and not (tmp_path / "ignored").exists()


def test_config_file(tmp_path):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text('[data]\nn = 120\nd = 4\nm = 2\nrho = 0.3\n')
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    side = json.loads((tmp_path / "data.meta.json").read_text())
    assert (side["n"], side["d"], side["m"]) == (120, 4, 2)
    bad = tmp_path / "bad.json"
    bad.write_text('{"nonsense": 1}')
    assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path)]) == 2


def test_missing_files_and_version_mismatch(tmp_path, dataset_csv):
    assert main(["sae", "--data", dataset_csv, "--model-file", str(tmp_path / "nope.json")]) == 2
    out = _train(tmp_path, dataset_csv, "m")
    doc = json.loads((out / "model.json").read_text())
    doc["schema_version"] = 7
    (out / "model.json").write_text(json.dumps(doc))
    assert main(["sae", "--data", dataset_csv, "--model-file", str(out / "model.json"),
                 "--out", str(out)]) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "attackability", "gen-data", *SMALL, "--out", str(tmp_path)],
                          capture_output=True, text=True, env={**os.environ, "ATTACKABILITY_OUTPUT_DIR": ""})
    assert proc.returncode == 0 and "wrote" in proc.stdout
