import numpy as np
import pytest
import torch

from fiabench.core import (ImageBatch, LabelledExample, PerturbationBudget, check_images, check_labels,
                           check_seed, clip_to_budget, derive_seed, linf_distance, make_rng, quantize)
from fiabench.exceptions import ContractViolationError, ParameterError


def test_check_images_adds_channel_axis():
    assert tuple(check_images(np.zeros((2, 5, 5))).shape) == (2, 1, 5, 5)


@pytest.mark.parametrize("bad", [np.zeros((5, 5)), np.zeros((0, 1, 3, 3)), np.full((1, 1, 2, 2), np.nan),
                                 np.full((1, 1, 2, 2), 300.0), np.full((1, 1, 2, 2), -1.0)])
def test_check_images_rejects(bad):
    with pytest.raises(ContractViolationError):
        check_images(bad)


def test_check_labels():
    assert check_labels([0, 2], 2, 3).tolist() == [0, 2]
    with pytest.raises(ContractViolationError):
        check_labels([0, 3], 2, 3)
    with pytest.raises(ContractViolationError):
        check_labels([0], 2)


def test_image_batch_and_example():
    batch = ImageBatch(np.zeros((1, 1, 3, 3)))
    assert batch.shape == (1, 1, 3, 3) and len(batch) == 1
    LabelledExample(batch, 4)
    with pytest.raises(ContractViolationError):
        LabelledExample(ImageBatch(np.zeros((2, 1, 3, 3))), 0)
    with pytest.raises(ContractViolationError):
        ImageBatch(np.zeros((1, 1, 3, 3)), (1.0, 1.0))


def test_budget_validation():
    assert PerturbationBudget().epsilon == 16.0
    PerturbationBudget(0.0)
    for bad in (-1.0, float("inf"), float("nan")):
        with pytest.raises(ParameterError):
            PerturbationBudget(bad)
    with pytest.raises(ParameterError):
        PerturbationBudget(4.0, "l2")


def test_clip_examples():
    # values from the budget examples: far outside, inside, range clamp
    clean = np.array([[[[100.0, 100.0, 250.0]]]])
    adv = np.array([[[[130.0, 90.0, 275.0]]]])
    out = clip_to_budget(adv, clean, 16.0)
    assert out.tolist() == [[[[116.0, 90.0, 255.0]]]]
    assert linf_distance(out, clean) <= 16.0


def test_clip_is_idempotent_and_exact():
    rng = np.random.default_rng(1)
    clean = rng.uniform(0, 255, (4, 1, 6, 6)).astype(np.float32)
    adv = clean + rng.uniform(-40, 40, clean.shape).astype(np.float32)
    eps = 16.0 / 3.0
    once = clip_to_budget(adv, clean, eps)
    assert np.array_equal(clip_to_budget(once, clean, eps), once)
    assert np.abs(once.astype(np.float32) - clean).max() <= np.float32(eps)


def test_clip_shape_mismatch():
    with pytest.raises(ContractViolationError):
        clip_to_budget(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)), 1.0)


def test_linf_distance():
    assert linf_distance(np.zeros((1, 1, 2, 2)), np.array([[[[0.0, -3.0], [2.0, 1.0]]]])) == 3.0
    assert linf_distance(torch.ones(3), torch.ones(3)) == 0.0


def test_seeds():
    assert check_seed(2**64 - 1) == 2**64 - 1
    with pytest.raises(ParameterError):
        check_seed(-1)
    assert make_rng(3).random() == make_rng(3).random()
    assert derive_seed(0, "a") == derive_seed(0, "a") != derive_seed(0, "b")


def test_quantize_stays_in_budget():
    clean = np.array([[[[10.0, 0.0, 255.0]]]])
    adv = np.array([[[[13.7, 0.0, 240.4]]]])
    q = quantize(adv, clean, 3.0).numpy()
    assert q.tolist() == [[[[13.0, 0.0, 252.0]]]]
