"""Frozen patch-transformer encoder standing in for a pretrained backbone.

Weights are drawn from a seeded generator and never trained. The token
sequence is ``[cls, registers..., patches...]``; every block's output is
returned as a spatial feature map with the non-spatial tokens dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from ..errors import DivisibilityError, ShapeError


@dataclass(frozen=True)
class BackboneConfig:
    embed_dim: int
    depth: int
    patch_size: int
    num_heads: int
    num_register_tokens: int = 4
    mlp_ratio: int = 4
    scale_name: str = "toy"

    def token_grid(self, height: int, width: int) -> tuple[int, int]:
        if height % self.patch_size or width % self.patch_size:
            raise DivisibilityError(
                f"input {height}x{width} is not divisible by patch size {self.patch_size}"
            )
        return height // self.patch_size, width // self.patch_size

    def check_layer_picks(self, picks) -> tuple[int, ...]:
        picks = tuple(int(p) for p in picks)
        if len(picks) != 4 or any(not (1 <= p <= self.depth) for p in picks):
            raise ShapeError(f"layer picks {picks} must be 4 indices in 1..{self.depth}")
        if list(picks) != sorted(set(picks)):
            raise ShapeError("layer picks must be strictly increasing (shallow to deep)")
        return picks


# base uses the standard ViT-B width of 768
PRESETS = {
    "toy": BackboneConfig(32, 8, 8, 4, scale_name="toy"),
    "small": BackboneConfig(384, 12, 14, 6, scale_name="small"),
    "base": BackboneConfig(768, 12, 14, 12, scale_name="base"),
    "large": BackboneConfig(1024, 24, 14, 16, scale_name="large"),
}
FUSION_WIDTH = {"toy": 64, "small": 256, "base": 256, "large": 256}
DEFAULT_LAYER_PICKS = {
    "toy": (2, 4, 6, 8),
    "small": (3, 6, 9, 12),
    "base": (3, 6, 9, 12),
    "large": (6, 12, 18, 24),
}


def sincos_position_embedding(grid_h: int, grid_w: int, dim: int) -> torch.Tensor:
    """Fixed 2-D sine-cosine embedding, shape (grid_h * grid_w, dim)."""
    if dim % 4:
        raise ShapeError("embedding dim must be divisible by 4")
    quarter = dim // 4
    omega = 1.0 / (10000 ** (torch.arange(quarter, dtype=torch.float64) / quarter))
    ys, xs = torch.meshgrid(torch.arange(grid_h, dtype=torch.float64),
                            torch.arange(grid_w, dtype=torch.float64), indexing="ij")
    oy = ys.reshape(-1, 1) * omega
    ox = xs.reshape(-1, 1) * omega
    return torch.cat([oy.sin(), oy.cos(), ox.sin(), ox.cos()], dim=1)


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        b, n, d = x.shape
        q, k, v = self.qkv(x).reshape(b, n, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(d // self.heads)
        out = att.softmax(dim=-1) @ v
        return self.proj(out.transpose(1, 2).reshape(b, n, d))


class Block(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, mlp_ratio * dim), nn.GELU(), nn.Linear(mlp_ratio * dim, dim))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class FrozenEncoder(nn.Module):
    def __init__(self, cfg: BackboneConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        e = cfg.embed_dim
        # default layer init would draw from the global RNG; keep that untouched
        with torch.random.fork_rng(devices=[]):
            self.patch_embed = nn.Conv2d(3, e, cfg.patch_size, stride=cfg.patch_size)
            self.extra_tokens = nn.Parameter(torch.zeros(1, 1 + cfg.num_register_tokens, e))
            self.blocks = nn.ModuleList(Block(e, cfg.num_heads, cfg.mlp_ratio) for _ in range(cfg.depth))
        self._seeded_init(seed)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def _seeded_init(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.endswith("bias"):
                    p.zero_()
                elif "norm" in name:
                    p.fill_(1.0)
                elif name.startswith("patch_embed"):
                    fan_in = p[0].numel()
                    p.copy_(torch.randn(p.shape, generator=g) / math.sqrt(fan_in))
                else:
                    p.copy_(torch.randn(p.shape, generator=g) * 0.02)

    def train(self, mode: bool = True):
        # stays in eval mode; there is nothing to train
        return super().train(False)

    @property
    def num_extra_tokens(self) -> int:
        return 1 + self.cfg.num_register_tokens

    def forward(self, image: torch.Tensor) -> list[torch.Tensor]:
        """(B, 3, H, W) -> list of ``depth`` maps of shape (B, E, H/P, W/P)."""
        if image.ndim != 4 or image.shape[1] != 3:
            raise ShapeError(f"expected (B, 3, H, W), got {tuple(image.shape)}")
        gh, gw = self.cfg.token_grid(image.shape[2], image.shape[3])
        b = image.shape[0]
        x = self.patch_embed(image).flatten(2).transpose(1, 2)
        x = x + sincos_position_embedding(gh, gw, self.cfg.embed_dim).to(x.dtype)
        x = torch.cat([self.extra_tokens.expand(b, -1, -1).to(x.dtype), x], dim=1)
        maps = []
        for blk in self.blocks:
            x = blk(x)
            spatial = x[:, self.num_extra_tokens:]
            maps.append(spatial.transpose(1, 2).reshape(b, self.cfg.embed_dim, gh, gw))
        return maps


def encoder_param_count(cfg: BackboneConfig) -> int:
    e, p, r = cfg.embed_dim, cfg.patch_size, cfg.mlp_ratio
    patch = 3 * p * p * e + e
    extra = (1 + cfg.num_register_tokens) * e
    block = (2 * e) * 2 + (3 * e * e + 3 * e) + (e * e + e) + (e * r * e + r * e) + (r * e * e + e)
    return patch + extra + cfg.depth * block
