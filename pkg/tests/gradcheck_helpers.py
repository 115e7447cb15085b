import numpy as np
import torch

from segbench.model.encoder import PRESETS
from segbench.model.loss import BceDiceLoss
from segbench.model.network import SegmentationModel


def float64_sample(seed=0, size=32, batch=2):
    """Toy model in float64 plus (encoder maps, target) for a size x size input."""
    model = SegmentationModel(PRESETS["toy"], seed=seed).double()
    g = torch.Generator().manual_seed(seed)
    images = torch.randn(batch, 3, size, size, generator=g, dtype=torch.float64)
    yy, xx = np.mgrid[:size, :size]
    target = np.stack([((yy - size / 2 + k) ** 2 + (xx - size / 2) ** 2 < (size / 4) ** 2) for k in range(batch)])
    return model, (model.encode(images), torch.as_tensor(target, dtype=torch.float64))


class WrongDiceBackward(BceDiceLoss):
    """Drops the Dice term from the backward rule; used as a fault injection."""

    @staticmethod
    def backward(ctx, grad_out):
        pf, yf, inter, denom = ctx.saved_tensors
        w_bce, w_dice, eps, shape = ctx.consts
        g_bce = (-yf / pf + (1 - yf) / (1 - pf)) / pf.numel()
        return (grad_out * w_bce * g_bce).reshape(shape), None, None, None, None
