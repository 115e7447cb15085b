import math

import numpy as np
import pytest
import torch

from segbench.errors import ConfigError, DimensionMismatch
from segbench.model.gradcheck import grad_check, group_relative_error, loss_input_grad_check, relative_error
from segbench.model.loss import LossWeights, bce_dice_loss

from gradcheck_helpers import WrongDiceBackward, float64_sample


def scalar_loss(p, y, w_bce=0.3, w_dice=0.7, eps=1.0):
    """Plain-Python loss on flat lists, one sample."""
    n = len(p)
    bce = -sum(yi * math.log(pi) + (1 - yi) * math.log(1 - pi) for pi, yi in zip(p, y)) / n
    inter = sum(pi * yi for pi, yi in zip(p, y))
    d = 1 - (2 * inter + eps) / (sum(p) + sum(y) + eps)
    return w_bce * bce + w_dice * d


def test_hand_derived_value():
    assert scalar_loss([0.5] * 4, [1] * 4) == pytest.approx(0.3 * math.log(2) + 0.7 * (1 - 5 / 7), abs=1e-15)
    got = bce_dice_loss(torch.full((2, 2), 0.5, dtype=torch.float64), torch.ones(2, 2, dtype=torch.float64))
    assert abs(got.item() - 0.407944) < 1e-6
    assert got.item() == pytest.approx(scalar_loss([0.5] * 4, [1] * 4), abs=1e-15)


def test_matches_scalar_reference(rng):
    for _ in range(20):
        p = rng.uniform(0.01, 0.99, (3, 5, 5))
        y = (rng.random((3, 5, 5)) < 0.5).astype(float)
        got = bce_dice_loss(torch.as_tensor(p), torch.as_tensor(y)).item()
        bce = np.mean([scalar_loss(pi.ravel().tolist(), yi.ravel().tolist(), 1.0, 0.0) for pi, yi in zip(p, y)])
        dice = np.mean([scalar_loss(pi.ravel().tolist(), yi.ravel().tolist(), 0.0, 1.0) for pi, yi in zip(p, y)])
        assert got == pytest.approx(0.3 * bce + 0.7 * dice, abs=1e-12)


def test_near_perfect_prediction():
    y = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    p = torch.where(y > 0, 1 - 1e-7, 1e-7)
    assert bce_dice_loss(p, y).item() < 1e-5


def test_loss_bounds(rng):
    for _ in range(50):
        p = torch.as_tensor(rng.random((2, 6, 6)))
        y = torch.as_tensor((rng.random((2, 6, 6)) < 0.3).astype(float))
        assert bce_dice_loss(p, y).item() >= 0
        assert bce_dice_loss(p, y, LossWeights(0.0, 1.0)).item() < 1


def test_loss_errors():
    with pytest.raises(DimensionMismatch):
        bce_dice_loss(torch.zeros(2, 2), torch.zeros(2, 3))
    with pytest.raises(ConfigError):
        LossWeights(0.5, 0.6)


def test_loss_input_gradient(rng):
    p = torch.as_tensor(rng.uniform(0.1, 0.9, (2, 6, 6)))
    y = torch.as_tensor((rng.random((2, 6, 6)) < 0.5).astype(float))
    rep = loss_input_grad_check(p, y, h=1e-3)
    assert rep.max_rel_err < 1e-4 and rep.n_checked == 72
    assert loss_input_grad_check(p, y, h=1e-3, loss_fn=WrongDiceBackward).max_rel_err > 1e-2


def test_decoder_gradient_check():
    model, sample = float64_sample(seed=0)
    rep = grad_check(model, sample, h=1e-3, n_per_group=50)
    assert set(rep.groups) == {"resample", "fuse", "head"}
    assert all(g["n"] >= 50 for g in rep.groups.values())
    assert rep.max_rel_err < 1e-4, rep.groups


def test_corrupted_backward_is_caught():
    model, sample = float64_sample(seed=1)
    rep = grad_check(model, sample, h=1e-3, n_per_group=10, loss_fn=WrongDiceBackward)
    assert rep.max_rel_err > 1e-2


def test_saturated_model_has_zero_gradients():
    model, (maps, _) = float64_sample(seed=2)
    with torch.no_grad():
        model.decoder.head.conv2.weight.zero_()
        model.decoder.head.conv2.bias.fill_(40.0)
    target = torch.ones(2, 32, 32, dtype=torch.float64)
    rep = grad_check(model, (maps, target), n_per_group=10)
    assert rep.max_abs_err < 1e-8


def test_relative_error_floors():
    assert relative_error([0.0], [0.0])[0] == 0.0
    assert relative_error([1.0], [1.1])[0] == pytest.approx(0.1 / 1.1)
    # tiny entries are judged against 1% of the group's largest gradient
    err = group_relative_error([1.0, 1e-6], [1.0, 2e-6])
    assert err[1] == pytest.approx(1e-6 / 1e-2)
