import json
import subprocess
import sys

import numpy as np
import pytest
import yaml
from PIL import Image

from fiabench.cli import ExperimentConfig, main

CONFIG = {
    "dataset": "digits",
    "n_images": 12,
    "epsilon": 32.0,
    "zoo": [
        {"name": "a", "arch": "allconv", "seed": 1, "accuracy_floor": 0.0, "params": {"epochs": 2}},
        {"name": "b", "arch": "vgg", "seed": 2, "accuracy_floor": 0.0, "params": {"epochs": 2}},
    ],
    "sources": ["a"],
    "targets": ["a", "b"],
    "attacks": [{"method": "FIA", "aggregation": {"ensemble_number": 2}}, {"method": "MIM"}],
    "sweep": {"axis": "ensemble_number", "values": [1, 2], "attack": {"method": "FIA"}},
    "ablation": {"variants": ["L1", "L2", "L3"], "attack": {"method": "L3", "aggregation": {"ensemble_number": 2}}},
    "visualize": {"model": "a", "index": 0, "tap": None, "drop_prob": 0.0, "ensemble_number": 1},
}


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = dict(CONFIG, output_dir=str(root / "out"))
    path = root / "exp.yaml"
    path.write_text(yaml.safe_dump(cfg))
    assert main(["train-zoo", "--config", str(path)]) == 0
    return root, path


def test_config_round_trip():
    cfg = ExperimentConfig.from_dict(dict(CONFIG, output_dir="x"))
    assert ExperimentConfig.from_dict(yaml.safe_load(cfg.dump())) == cfg


def test_train_zoo_cached(run_dir, capsys):
    root, path = run_dir
    assert (root / "out" / "checkpoints" / "a.json").exists()
    assert main(["train-zoo", "--config", str(path)]) == 0
    assert "cached" in capsys.readouterr().out
    sidecar = json.loads((root / "out" / "checkpoints" / "a.json").read_text())
    from fiabench.modelzoo import load_checkpoint, load_dataset

    ds = load_dataset("digits")
    model = load_checkpoint(root / "out" / "checkpoints" / "a.json")
    acc = float((model.predict(ds.x_test) == ds.y_test).mean())
    assert abs(acc - sidecar["clean_accuracy"]) <= 1e-3


def test_missing_dataset_is_usage_error(tmp_path, capsys):
    code = main(["train-zoo", "--dataset", str(tmp_path / "none.npz"), "--output-dir", str(tmp_path / "o")])
    assert code == 2
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record["command"] == "train-zoo" and "not found" in record["message"]


def test_attack_evaluate_verify(run_dir, capsys):
    root, path = run_dir
    assert main(["attack", "--config", str(path)]) == 0
    adv_dir = root / "out" / "adversarials" / "a__FIA"
    manifest = json.loads((adv_dir / "manifest.json").read_text())
    echoed = dict(CONFIG["attacks"][0], epsilon=32.0)
    assert manifest["config_echo"]["method"] == "FIA"
    assert manifest["config_echo"]["aggregation"]["ensemble_number"] == echoed["aggregation"]["ensemble_number"]
    assert manifest["config_echo"]["epsilon"] == 32.0 and manifest["source_model"] == "a"
    assert len(manifest["images"]) == 12
    assert main(["verify-budget", str(root / "out" / "adversarials")]) == 0
    assert main(["evaluate", "--config", str(path)]) == 0
    out = capsys.readouterr().out
    assert "%" in out
    assert (root / "out" / "results" / "transfer.csv").exists()
    echo = yaml.safe_load((root / "out" / "config.yaml").read_text())
    assert ExperimentConfig.from_dict(echo) == ExperimentConfig.from_dict(dict(CONFIG, output_dir=str(root / "out")))


def test_zero_budget_attack(run_dir):
    root, path = run_dir
    out = root / "zero"
    import shutil

    shutil.copytree(root / "out" / "checkpoints", out / "checkpoints")
    assert main(["attack", "--config", str(path), "--output-dir", str(out), "--epsilon", "0",
                 "--method", "MIM"]) == 0
    d = out / "adversarials" / "a__MIM"
    manifest = json.loads((d / "manifest.json").read_text())
    for rec in manifest["images"]:
        assert np.array_equal(np.asarray(Image.open(d / rec["adversarial"])), np.asarray(Image.open(d / rec["clean"])))


def test_evaluate_without_attacks(run_dir):
    root, path = run_dir
    out = root / "empty"
    assert main(["evaluate", "--config", str(path), "--output-dir", str(out), "--set", "attacks=[]"]) == 0
    assert (out / "results" / "transfer.csv").read_text().strip().startswith("source,attack,target")
    assert len((out / "results" / "transfer.csv").read_text().strip().splitlines()) == 1


def test_evaluate_missing_manifests(run_dir, tmp_path):
    root, path = run_dir
    assert main(["evaluate", "--config", str(path), "--output-dir", str(tmp_path / "nothing")]) == 2


def test_sweep_and_ablate(run_dir):
    root, path = run_dir
    assert main(["sweep", "--config", str(path)]) == 0
    res = json.loads((root / "out" / "results" / "sweep_ensemble_number.json").read_text())
    assert [p[0] for p in res["points"]] == [1, 2]
    assert (root / "out" / "plots" / "sweep_ensemble_number.png").exists()
    assert main(["ablate", "--config", str(path)]) == 0
    assert (root / "out" / "results" / "ablation.csv").exists()


def test_visualize(run_dir):
    root, path = run_dir
    assert main(["visualize", "--config", str(path)]) == 0
    plots = root / "out" / "plots"
    for name in ("heatmap_raw.png", "heatmap_aggregate.png", "features_montage.png"):
        Image.open(plots / name).verify()
    maps = np.load(plots / "heatmaps.npz")
    # p_d = 0 and N = 1: both maps are the same
    assert np.allclose(maps["raw"], maps["aggregate"], atol=1e-6)
    assert maps["raw"].min() == 0.0 and maps["raw"].max() == 1.0


def test_verify_budget_writes_nothing(run_dir, tmp_path, monkeypatch):
    root, _ = run_dir
    monkeypatch.chdir(tmp_path)
    assert main(["verify-budget", str(root / "out" / "adversarials")]) == 0
    assert list(tmp_path.iterdir()) == []


def test_verify_budget_detects_violation(run_dir, tmp_path):
    root, path = run_dir
    import shutil

    d = tmp_path / "adv"
    shutil.copytree(root / "out" / "adversarials" / "a__MIM", d)
    manifest = json.loads((d / "manifest.json").read_text())
    rec = manifest["images"][0]
    clean = np.asarray(Image.open(d / rec["clean"])).astype(int)
    Image.fromarray(np.where(clean > 127, 0, 255).astype(np.uint8)).save(d / rec["adversarial"])
    assert main(["verify-budget", str(d)]) == 1


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "fiabench.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for sub in ("train-zoo", "attack", "evaluate", "sweep", "ablate", "visualize", "verify-budget"):
        assert sub in out.stdout


def test_ensemble_source(run_dir):
    root, path = run_dir
    out = root / "ens"
    import shutil

    shutil.copytree(root / "out" / "checkpoints", out / "checkpoints")
    assert main(["attack", "--config", str(path), "--output-dir", str(out), "--method", "MIM",
                 "--set", "ensembles={ab: [a, b]}", "--set", "sources=[ab]"]) == 0
    manifest = json.loads((out / "adversarials" / "ab__MIM" / "manifest.json").read_text())
    assert manifest["source_model"] == "ab"
    assert main(["evaluate", "--config", str(path), "--output-dir", str(out), "--set", "ensembles={ab: [a, b]}",
                 "--set", "sources=[ab]", "--set", "attacks=[{method: MIM}]"]) == 0
    rows = (out / "results" / "transfer.csv").read_text().strip().splitlines()
    assert len(rows) == 3 and all(",True" in r or "white" in r for r in rows)
