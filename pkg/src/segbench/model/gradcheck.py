"""Central-difference checks of analytic gradients (run in float64)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .loss import BceDiceLoss, LossWeights, bce_dice_loss

ABS_FLOOR = 1e-8
# Entries far below the group's largest gradient are sums with heavy
# cancellation; their O(h^2) difference error is judged against this share of
# the group scale instead of their own magnitude.
GROUP_FLOOR = 1e-2


def relative_error(a: np.ndarray, n: np.ndarray, floor: float = ABS_FLOOR) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor), elementwise."""
    a, n = np.asarray(a, dtype=np.float64), np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def group_relative_error(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    a, n = np.asarray(a, dtype=np.float64), np.asarray(n, dtype=np.float64)
    if a.size == 0:
        return a
    scale = max(np.abs(a).max(), np.abs(n).max())
    return relative_error(a, n, max(ABS_FLOOR, GROUP_FLOOR * scale))


@dataclass
class GradCheckReport:
    max_rel_err: float
    max_abs_err: float
    n_checked: int
    groups: dict = field(default_factory=dict)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_err < tol


def _summarize(per_group: dict) -> GradCheckReport:
    groups = {}
    for name, g in per_group.items():
        a, n = g["analytic"], g["numeric"]
        rel = group_relative_error(a, n)
        groups[name] = {
            "n": len(rel),
            "max_rel_err": float(rel.max()) if len(rel) else 0.0,
            "max_abs_err": float(np.abs(a - n).max()) if len(rel) else 0.0,
            "max_elementwise_rel_err": float(relative_error(a, n).max()) if len(rel) else 0.0,
        }
    return GradCheckReport(
        max_rel_err=max(g["max_rel_err"] for g in groups.values()),
        max_abs_err=max(g["max_abs_err"] for g in groups.values()),
        n_checked=sum(g["n"] for g in groups.values()),
        groups=groups,
    )


def grad_check(model, sample, h: float = 1e-3, n_per_group: int = 50, seed: int = 0,
               weights: LossWeights = LossWeights(), loss_fn=BceDiceLoss) -> GradCheckReport:
    """Compare backprop gradients of the decoder loss with central differences.

    ``sample`` is ``(maps, target)``: the four selected encoder maps and a
    (B, H, W) target. Parameters are sampled per decoder group (resampler,
    fusion blocks, head). The model must be in float64.
    """
    maps, target = sample
    size = tuple(target.shape[-2:])
    dec = model.decoder

    def loss_value():
        return bce_dice_loss(torch.sigmoid(model.decode_logits(maps, size)), target, weights, fn=loss_fn)

    for p in dec.parameters():
        p.grad = None
    loss_value().backward()

    rng = np.random.default_rng(seed)
    per_group = {}
    with torch.no_grad():
        for group, named in dec.param_groups().items():
            slots = [(p, i) for _, p in named for i in range(p.numel())]
            pick = rng.choice(len(slots), size=min(n_per_group, len(slots)), replace=False)
            analytic, numeric = [], []
            for k in sorted(pick.tolist()):
                p, i = slots[k]
                flat = p.view(-1)
                orig = flat[i].item()
                flat[i] = orig + h
                up = loss_value().item()
                flat[i] = orig - h
                down = loss_value().item()
                flat[i] = orig
                numeric.append((up - down) / (2 * h))
                analytic.append(p.grad.view(-1)[i].item())
            per_group[group] = {"analytic": np.array(analytic), "numeric": np.array(numeric)}
    return _summarize(per_group)


def loss_input_grad_check(pred: torch.Tensor, target: torch.Tensor, h: float = 1e-3,
                          weights: LossWeights = LossWeights(), loss_fn=BceDiceLoss) -> GradCheckReport:
    """Check d(loss)/d(pred) for every pixel of a float64 probability map."""
    p = pred.detach().clone().double().requires_grad_(True)
    t = target.double()
    bce_dice_loss(p, t, weights, fn=loss_fn).backward()
    analytic = p.grad.reshape(-1).numpy().copy()
    numeric = np.empty_like(analytic)
    with torch.no_grad():
        flat = p.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            up = bce_dice_loss(p, t, weights, fn=loss_fn).item()
            flat[i] = orig - h
            down = bce_dice_loss(p, t, weights, fn=loss_fn).item()
            flat[i] = orig
            numeric[i] = (up - down) / (2 * h)
    return _summarize({"pred": {"analytic": analytic, "numeric": numeric}})
