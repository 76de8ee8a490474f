import csv
import json

import numpy as np
import pytest
import torch

from fiabench.attacks import AttackConfig
from fiabench.exceptions import ConfigError, UndefinedRateError
from fiabench.harness import (CSV_FIELDS, AblationSpec, Cell, TransferMatrix, evaluate_success, format_rate,
                              plot_sweep, run_ablation, sweep_figure, run_sweep, run_transfer_matrix)

from test_runner import _images, _model


class PixelReader:
    """Predicts the class stored in the first pixel (0, 1 or 2)."""

    def logits_t(self, x):
        cls = x[:, 0, 0, 0].long().clamp(0, 2)
        return torch.nn.functional.one_hot(cls, 3).to(x.dtype)


def test_evaluate_success_counting():
    clean = np.zeros((3, 1, 2, 2))
    clean[:, 0, 0, 0] = [0, 1, 2]
    labels = np.array([0, 1, 2])
    assert evaluate_success(PixelReader(), clean, clean, labels) == 0.0
    adv = clean.copy()
    adv[:, 0, 0, 0] = [1, 2, 2]
    assert evaluate_success(PixelReader(), adv, clean, labels) == pytest.approx(2 / 3)
    with pytest.raises(UndefinedRateError):
        evaluate_success(PixelReader(), adv, clean, np.array([1, 2, 0]))


def test_format_rate():
    assert format_rate(0.835) == "83.5%"
    m = TransferMatrix([Cell("a", "FIA", "b", 200, 167, 0.835, False, 200, 167, 0.835)], 200)
    assert "83.5%" in m.format_table("FIA")


def _setup():
    # s1 is a slightly perturbed copy of s0, so both classify the data alike
    s1 = _model(0)
    with torch.no_grad():
        g = torch.Generator().manual_seed(0)
        for p in s1.module_.parameters():
            p.add_(0.01 * torch.randn(p.shape, generator=g, dtype=p.dtype))
    models = {"s0": _model(0), "s1": s1}
    x = _images(6, 2)
    y = models["s0"].predict(x)
    return models, (x, y)


def test_single_cell_matrix_and_determinism(tmp_path):
    models, data = _setup()
    cfg = AttackConfig(method="FIA", epsilon=8, aggregation={"ensemble_number": 2})
    m = run_transfer_matrix({"s0": models["s0"]}, {"FIA": cfg}, {"s1": models["s1"]}, data, seed=3)
    assert len(m.cells) == 1 and not m.cells[0].white_box
    m2 = run_transfer_matrix({"s0": models["s0"]}, {"FIA": cfg}, {"s1": models["s1"]}, data, seed=3)
    assert m.to_dict() == m2.to_dict()
    csv_path, json_path = m.save(tmp_path)
    rows = list(csv.DictReader(open(csv_path)))
    assert list(rows[0]) == CSV_FIELDS
    assert TransferMatrix.load(json_path).to_dict() == json.loads(json.dumps(m.to_dict()))


def test_full_matrix_flags_white_box():
    models, data = _setup()
    attacks = [AttackConfig(method="MIM", epsilon=8), AttackConfig(method="NRDM", epsilon=8)]
    m = run_transfer_matrix(models, attacks, models, data, seed=0)
    assert len(m.cells) == 2 * 2 * 2
    flags = m.white_box_flags
    assert flags[("s0", "MIM", "s0")] and not flags[("s0", "MIM", "s1")]
    for c in m.cells:
        assert 0.0 <= c.rate <= 1.0 and c.n <= c.n_all
    assert m.mean_transfer("MIM") == pytest.approx(np.mean([m.rate("s0", "MIM", "s1"), m.rate("s1", "MIM", "s0")]))


def test_empty_attack_list_gives_header_only(tmp_path):
    models, data = _setup()
    m = run_transfer_matrix(models, {}, models, data)
    csv_path, _ = m.save(tmp_path)
    assert open(csv_path).read().strip() == ",".join(CSV_FIELDS)


def test_ensemble_source_cells():
    models, data = _setup()
    m = run_transfer_matrix({"ens": ["s0", "s1"]}, {"MIM": AttackConfig(method="MIM", epsilon=8)},
                            models, data, models=models)
    assert all(c.white_box for c in m.cells)


def test_sweep(tmp_path):
    models, data = _setup()
    fixed = AttackConfig(method="FIA", epsilon=8, aggregation={"ensemble_number": 2})
    r = run_sweep("drop_prob", [0.3], fixed, {"s0": models["s0"]}, {"s1": models["s1"]}, data)
    assert len(r.points) == 1 and r.values == [0.3]
    with pytest.raises(ConfigError):
        run_sweep("drop_prob", [0.3, 0.1], fixed, {"s0": models["s0"]}, {"s1": models["s1"]}, data)
    with pytest.raises(ConfigError):
        run_sweep("nope", [1], fixed, {"s0": models["s0"]}, {"s1": models["s1"]}, data)
    r = run_sweep("layer", ["block1", "block2"], fixed, {"s0": models["s0"]}, {"s1": models["s1"]}, data)
    assert r.values == ["block1", "block2"]
    r = run_sweep("ensemble_number", [1, 3], fixed, {"s0": models["s0"]}, {"s1": models["s1"]}, data)
    path = plot_sweep(r, tmp_path / "s.png")
    assert path.exists()
    import matplotlib.pyplot as plt

    fig = sweep_figure(r)
    ax = fig.axes[0]
    assert list(ax.get_xticks()) == [1, 3]
    assert [t.get_text() for t in ax.get_xticklabels()] == ["1", "3"]
    plt.close(fig)


def test_ablation_l3_equals_fia():
    models, data = _setup()
    base = AttackConfig(method="FIA", epsilon=8, aggregation={"ensemble_number": 2})
    fia = run_transfer_matrix({"s0": models["s0"]}, {"FIA": base}, models, data, seed=1)
    abl = run_ablation(["L1", "L2", "L3"], {"s0": models["s0"]}, models, data, base.replace(method="L3"), seed=1)
    assert abl.attacks == ["L1", "L2", "L3"]
    for t in models:
        assert abl.rate("s0", "L3", t) == fia.rate("s0", "FIA", t)
    with pytest.raises(ConfigError):
        AblationSpec("L4")
