"""Weighted BCE + Dice loss with an explicit backward rule.

For probabilities p (clamped to [1e-7, 1 - 1e-7]) and binary targets y over N
pixels of each sample::

    bce  = -mean(y log p + (1 - y) log(1 - p))
    dice = 1 - (2 sum(p y) + eps) / (sum(p) + sum(y) + eps)    per sample, then batch mean
    loss = w_bce * bce + w_dice * dice
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from ..errors import ConfigError, DimensionMismatch

CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    bce: float = 0.3
    dice: float = 0.7
    eps: float = 1.0

    def __post_init__(self):
        if abs(self.bce + self.dice - 1.0) > 1e-9:
            raise ConfigError("loss weights must sum to 1")
        if self.eps <= 0:
            raise ConfigError("dice epsilon must be positive")


class BceDiceLoss(torch.autograd.Function):
    @staticmethod
    def forward(ctx, p, y, w_bce, w_dice, eps):
        b = p.shape[0]
        pf, yf = p.reshape(b, -1), y.reshape(b, -1)
        bce = -(yf * pf.log() + (1 - yf) * (1 - pf).log()).mean()
        inter = (pf * yf).sum(dim=1)
        denom = pf.sum(dim=1) + yf.sum(dim=1) + eps
        dice = 1 - (2 * inter + eps) / denom
        ctx.save_for_backward(pf, yf, inter, denom)
        ctx.consts = (w_bce, w_dice, eps, p.shape)
        return w_bce * bce + w_dice * dice.mean()

    @staticmethod
    def backward(ctx, grad_out):
        pf, yf, inter, denom = ctx.saved_tensors
        w_bce, w_dice, eps, shape = ctx.consts
        b = pf.shape[0]
        g_bce = (-yf / pf + (1 - yf) / (1 - pf)) / pf.numel()
        g_dice = -(2 * yf * denom[:, None] - (2 * inter + eps)[:, None]) / denom[:, None] ** 2 / b
        grad = grad_out * (w_bce * g_bce + w_dice * g_dice)
        return grad.reshape(shape), None, None, None, None


def check_shapes(pred: torch.Tensor, target: torch.Tensor) -> None:
    if pred.shape != target.shape:
        raise DimensionMismatch(f"prediction {tuple(pred.shape)} vs target {tuple(target.shape)}")


def bce_dice_loss(pred: torch.Tensor, target: torch.Tensor, weights: LossWeights = LossWeights(),
                  fn=BceDiceLoss) -> torch.Tensor:
    """Loss for probability maps shaped (B, ...) or a single (H, W) map.

    ``fn`` swaps in another autograd rule, which is how the gradient checker's
    negative control is run.
    """
    check_shapes(pred, target)
    if pred.ndim == 2:
        pred, target = pred[None], target[None]
    p = pred.clamp(CLAMP, 1 - CLAMP)
    return fn.apply(p, target.to(p.dtype), weights.bce, weights.dice, weights.eps)
