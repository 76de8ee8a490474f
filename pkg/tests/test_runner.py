import json

import numpy as np
import pytest
import torch
from sklearn.base import clone

from fiabench.attacks import (AttackConfig, AttackTransformer, export_result, get_objective, run_attack,
                              run_fia, run_mim)
from fiabench.core import ImageBatch, LabelledExample
from fiabench.exceptions import ConfigError
from fiabench.verify import verify_budget

from conftest import make_stub

ALL_METHODS = ["FIA", "MIM", "DIM", "TIM", "PIM", "TIDIM", "PIDIM", "PITIDIM", "NRDM", "FDA",
               "FIA+PIDIM", "FIA+PITIDIM", "L1", "L2", "L3"]


def _images(n=4, seed=0, size=8):
    return np.random.default_rng(seed).integers(0, 256, size=(n, 1, size, size)).astype(np.float64)


def _model(seed=0):
    # ReLU stub at pixel scale so a budget of a few pixels matters
    from torch import nn
    from fiabench.modelzoo import CNNClassifier, TappedNet

    with torch.random.fork_rng():
        torch.manual_seed(seed)
        net = TappedNet([nn.Sequential(nn.Conv2d(1, 4, 3, padding=1), nn.ReLU()),
                         nn.Sequential(nn.Conv2d(4, 4, 3, padding=1), nn.ReLU())],
                        nn.Sequential(nn.Flatten(), nn.Linear(4 * 64, 3))).double()
    return CNNClassifier.from_module(net, arch="stub", num_classes=3, input_shape=(1, 8, 8))


@pytest.mark.parametrize("method", ALL_METHODS)
def test_budget_for_every_method(method):
    model, x = _model(), _images()
    cfg = AttackConfig(method=method, epsilon=8, aggregation={"ensemble_number": 3}, seed=1)
    r = run_attack(model, x, [0, 1, 2, 0], cfg)
    assert (r.adversarial - r.clean).abs().max() <= 8
    assert r.adversarial.min() >= 0 and r.adversarial.max() <= 255
    assert r.loss_trace.shape == (cfg.iterations + 1, 4)


def test_zero_budget_returns_clean():
    model, x = _model(), _images()
    for method in ("FIA", "MIM", "NRDM"):
        r = run_attack(model, x, [0, 1, 2, 0], AttackConfig(method=method, epsilon=0))
        assert torch.equal(r.adversarial, r.clean)
        pred = model.predict(x)
        assert np.array_equal(r.success_on_source, pred != np.array([0, 1, 2, 0]))


def test_dispatch_identity_and_l3_equivalence():
    model, x, y = _model(), _images(), [0, 1, 2, 0]
    cfg = AttackConfig(method="FIA", epsilon=8, aggregation={"ensemble_number": 4}, seed=3)
    a = run_attack(model, x, y, cfg)
    b = run_fia(model, x, y, cfg)
    c = run_attack(model, x, y, cfg.replace(method="L3"))
    assert torch.equal(a.adversarial, b.adversarial)
    assert torch.equal(a.adversarial, c.adversarial)
    with pytest.raises(ConfigError):
        run_fia(model, x, y, AttackConfig(method="MIM"))
    with pytest.raises(ConfigError):
        run_mim(model, x, y, AttackConfig(method="FIA"))


def test_determinism():
    model, x, y = _model(), _images(), [0, 1, 2, 0]
    cfg = AttackConfig(method="FIA+PITIDIM", epsilon=8, aggregation={"ensemble_number": 3}, seed=11)
    a, b = run_attack(model, x, y, cfg), run_attack(model, x, y, cfg)
    assert torch.equal(a.adversarial, b.adversarial)
    assert np.array_equal(a.loss_trace, b.loss_trace)
    c = run_attack(model, x, y, cfg.replace(seed=12))
    assert not torch.equal(a.adversarial, c.adversarial)


def test_labelled_example_and_predicted_labels():
    model, x = _model(), _images(1)
    ex = LabelledExample(ImageBatch(x), 2)
    r = run_attack(model, ex, cfg=AttackConfig(epsilon=4, aggregation={"ensemble_number": 2}))
    assert r.labels.tolist() == [2]
    r2 = run_attack(model, x, cfg=AttackConfig(method="MIM", epsilon=4))
    assert r2.labels.tolist() == model.predict(x).tolist()


def test_degenerate_aggregate_is_flagged():
    model = _model()
    with torch.no_grad():
        model.module_.head[1].weight[0] = 0
    x = _images(2)
    r = run_attack(model, x, [0, 1], AttackConfig(epsilon=8, aggregation={"ensemble_number": 2}))
    assert r.failed.tolist() == [True, False]
    assert torch.equal(r.adversarial[0], r.clean[0])


def test_ensemble_source():
    models = [_model(0), _model(1)]
    x, y = _images(), [0, 1, 2, 0]
    r = run_attack(models, x, y, AttackConfig(epsilon=8, aggregation={"ensemble_number": 2}))
    assert r.taps == ("m0/block1", "m1/block1")
    r = run_attack(models, x, y, AttackConfig(epsilon=8, tap="block2", aggregation={"ensemble_number": 2}))
    assert r.taps == ("m0/block2", "m1/block2")


def test_value_range_mismatch():
    with pytest.raises(Exception):
        run_attack(_model(), _images(), [0, 1, 2, 0], AttackConfig(value_range=(0, 1)))


def test_fia_loss_trace_mostly_decreases():
    model, x = _model(), _images(8, 3)
    r = run_attack(model, x, model.predict(x), AttackConfig(epsilon=16, aggregation={"ensemble_number": 4}))
    mean = r.loss_trace.mean(1)
    assert (np.diff(mean) <= 0).mean() >= 0.7


def test_stub_objectives():
    model, x = make_stub(), np.random.default_rng(0).uniform(0, 1, (2, 1, 8, 8))
    assert np.array_equal(model.grad_scalar_wrt_input(x, "pixel_sum"), np.ones_like(x))
    assert np.array_equal(model.grad_scalar_wrt_input(x, "zero"), np.zeros_like(x))
    with pytest.raises(ConfigError):
        get_objective("nope")


def test_transformer_api():
    model, x, y = _model(), _images(), np.array([0, 1, 2, 0])
    t = AttackTransformer(model, method="MIM", epsilon=4)
    assert t.get_params()["epsilon"] == 4
    adv = t.fit_transform(x, y)
    assert adv.shape == x.shape and np.abs(adv - x).max() <= 4
    assert clone(t).get_params()["method"] == "MIM"
    adv2 = AttackTransformer(model, method="DIM", epsilon=4, extra={"momentum": 0.5}).fit(x).transform(x)
    assert adv2.shape == x.shape


def test_export_and_verify(tmp_path):
    model, x, y = _model(), _images(), [0, 1, 2, 0]
    cfg = AttackConfig(method="FIA", epsilon=8, aggregation={"ensemble_number": 2}, seed=5)
    r = run_attack(model, x, y, cfg)
    path = export_result(r, tmp_path / "adv", "stub", ids=[10, 11, 12, 13])
    manifest = json.loads(path.read_text())
    assert manifest["config_echo"] == cfg.to_dict()
    assert [m["id"] for m in manifest["images"]] == [10, 11, 12, 13]
    report = verify_budget(path)
    assert report["ok"] and report["max_linf"] <= 8
    # tamper with one file: the verifier must notice
    from PIL import Image

    f = tmp_path / "adv" / manifest["images"][0]["adversarial"]
    arr = np.asarray(Image.open(f)).astype(np.int32)
    clean = np.asarray(Image.open(tmp_path / "adv" / manifest["images"][0]["clean"])).astype(np.int32)
    arr = np.where(clean > 127, clean - 20, clean + 20).astype(np.uint8)
    Image.fromarray(arr).save(f)
    assert not verify_budget(path)["ok"]
