"""Dense-prediction decoder: resample to a pyramid, fuse coarse-to-fine, predict.

For a token grid of size g the pyramid levels sit at 4g, 2g, g and g/2.
Fusion runs from the coarsest level up::

    H3 = phi3(G3)
    Hk = phik(Gk + up2(H(k+1)))   for k = 2, 1, 0

and the head maps H0 (at 4g) to a full-resolution probability map.
All upsampling is bilinear with half-pixel centres (align_corners=False).
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ShapeError

ACTIVATIONS = {"relu": F.relu, "gelu": F.gelu, "silu": F.silu}


def upsample(x: torch.Tensor, size) -> torch.Tensor:
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)


class Resampler(nn.Module):
    """Project four encoder maps to a common width and move them onto the pyramid scales."""

    def __init__(self, in_dim: int, width: int):
        super().__init__()
        self.proj = nn.ModuleList(nn.Conv2d(in_dim, width, 1) for _ in range(4))
        self.down = nn.Conv2d(width, width, 2, stride=2)

    def identity_init_(self) -> "Resampler":
        """Projections become channel identity (needs in_dim == width); downsampling becomes 2x2 averaging."""
        with torch.no_grad():
            for conv in self.proj:
                if conv.in_channels != conv.out_channels:
                    raise ShapeError("identity projection needs in_dim == width")
                conv.weight.zero_()
                conv.weight[:, :, 0, 0].copy_(torch.eye(conv.out_channels))
                conv.bias.zero_()
            self.down.weight.zero_()
            idx = torch.arange(self.down.out_channels)
            self.down.weight[idx, idx] = 0.25
            self.down.bias.zero_()
        return self

    def forward(self, maps):
        if len(maps) != 4:
            raise ShapeError(f"resampler needs exactly 4 maps, got {len(maps)}")
        shape = maps[0].shape[-2:]
        if any(m.shape[-2:] != shape for m in maps):
            raise ShapeError("all encoder maps must share one token grid")
        gh, gw = shape
        if gh % 2 or gw % 2:
            raise ShapeError(f"token grid {gh}x{gw} must be even to halve")
        p = [conv(m) for conv, m in zip(self.proj, maps)]
        return [
            upsample(p[0], (4 * gh, 4 * gw)),
            upsample(p[1], (2 * gh, 2 * gw)),
            p[2],
            self.down(p[3]),
        ]


class ResidualConvUnit(nn.Module):
    def __init__(self, width: int, act: str):
        super().__init__()
        self.conv1 = nn.Conv2d(width, width, 3, padding=1)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1)
        self.act = ACTIVATIONS[act]

    def forward(self, x):
        return x + self.conv2(self.act(self.conv1(self.act(x))))


class FusionBlock(nn.Module):
    def __init__(self, width: int, act: str):
        super().__init__()
        self.rcu1 = ResidualConvUnit(width, act)
        self.rcu2 = ResidualConvUnit(width, act)

    def forward(self, x):
        return self.rcu2(self.rcu1(x))


class PredictionHead(nn.Module):
    def __init__(self, width: int, act: str):
        super().__init__()
        self.conv1 = nn.Conv2d(width, width // 2, 3, padding=1)
        self.conv2 = nn.Conv2d(width // 2, 1, 1)
        self.act = ACTIVATIONS[act]

    def forward(self, h0, size):
        """Logits of shape (B, 1, *size)."""
        return self.conv2(self.act(upsample(self.conv1(h0), size)))


class Decoder(nn.Module):
    def __init__(self, in_dim: int, width: int, act: str = "gelu"):
        super().__init__()
        self.width = width
        self.resample = Resampler(in_dim, width)
        self.fuse_blocks = nn.ModuleList(FusionBlock(width, act) for _ in range(4))
        self.head = PredictionHead(width, act)

    def fuse(self, pyramid):
        if len(pyramid) != 4:
            raise ShapeError("fusion needs a 4-level pyramid")
        for lo, hi in zip(pyramid[1:], pyramid[:-1]):
            if tuple(hi.shape[-2:]) != (2 * lo.shape[-2], 2 * lo.shape[-1]):
                raise ShapeError("pyramid levels must double in size from coarse to fine")
        if any(g.shape[1] != self.width for g in pyramid):
            raise ShapeError(f"pyramid levels must have {self.width} channels")
        h = self.fuse_blocks[3](pyramid[3])
        for k in (2, 1, 0):
            h = self.fuse_blocks[k](pyramid[k] + upsample(h, pyramid[k].shape[-2:]))
        return h

    def forward(self, maps, size):
        return self.head(self.fuse(self.resample(maps)), size)

    def param_groups(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        return {
            "resample": list(self.resample.named_parameters(prefix="resample")),
            "fuse": list(self.fuse_blocks.named_parameters(prefix="fuse_blocks")),
            "head": list(self.head.named_parameters(prefix="head")),
        }


def decoder_param_count(in_dim: int, width: int) -> int:
    resample = 4 * (in_dim * width + width) + (4 * width * width + width)
    rcu = 2 * (9 * width * width + width)
    head = (9 * width * (width // 2) + width // 2) + (width // 2 + 1)
    return resample + 4 * 2 * rcu + head
