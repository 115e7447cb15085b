from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from ..data import BinaryMask, Image, ProbMask, normalize, resize, resize_mask, to_pseudo_rgb
from .decoder import Decoder, decoder_param_count
from .encoder import (
    DEFAULT_LAYER_PICKS,
    FUSION_WIDTH,
    PRESETS,
    BackboneConfig,
    FrozenEncoder,
    encoder_param_count,
)


class SegmentationModel(nn.Module):
    """Frozen encoder feeding four of its layers to a trainable decoder."""

    def __init__(self, backbone: BackboneConfig, layer_picks: Optional[Sequence[int]] = None,
                 fusion_width: Optional[int] = None, seed: int = 0, act: str = "gelu"):
        super().__init__()
        self.backbone_cfg = backbone
        self.layer_picks = backbone.check_layer_picks(
            layer_picks or DEFAULT_LAYER_PICKS.get(backbone.scale_name, (2, 4, 6, 8)))
        self.fusion_width = fusion_width or FUSION_WIDTH.get(backbone.scale_name, 64)
        self.encoder = FrozenEncoder(backbone, seed=seed)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed + 1)
            self.decoder = Decoder(backbone.embed_dim, self.fusion_width, act=act)

    @classmethod
    def from_preset(cls, scale: str, **kwargs) -> "SegmentationModel":
        return cls(PRESETS[scale], **kwargs)

    @torch.no_grad()
    def encode(self, images: torch.Tensor) -> list[torch.Tensor]:
        maps = self.encoder(images)
        return [maps[i - 1] for i in self.layer_picks]

    def decode_logits(self, maps, size) -> torch.Tensor:
        return self.decoder(maps, size)[:, 0]

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) -> probabilities (B, H, W)."""
        return torch.sigmoid(self.decode_logits(self.encode(images), images.shape[-2:]))

    def trainable_parameters(self):
        return [p for p in self.decoder.parameters() if p.requires_grad]

    def param_counts(self) -> dict[str, int]:
        enc = sum(p.numel() for p in self.encoder.parameters())
        dec = sum(p.numel() for p in self.decoder.parameters())
        return {"encoder": enc, "decoder": dec, "total": enc + dec}


def nominal_param_count(scale: str) -> int:
    """Encoder + decoder parameter count for a preset, without building it."""
    cfg = PRESETS[scale]
    return encoder_param_count(cfg) + decoder_param_count(cfg.embed_dim, FUSION_WIDTH[scale])


def prepare_image(pixels: np.ndarray, resolution: Optional[int] = None) -> np.ndarray:
    """Raw grayscale frame -> normalized pseudo-RGB array of shape (3, H, W)."""
    img = Image(pixels)
    if resolution is not None and (img.height, img.width) != (resolution, resolution):
        img = resize(img, resolution, resolution)
    rgb = to_pseudo_rgb(normalize(img))
    return np.ascontiguousarray(rgb.pixels.transpose(2, 0, 1))


def prepare_mask(mask: BinaryMask, resolution: Optional[int] = None) -> np.ndarray:
    if resolution is not None and mask.shape != (resolution, resolution):
        mask = resize_mask(mask, resolution, resolution)
    return mask.bits.astype(np.float32)


@torch.no_grad()
def predict(model: SegmentationModel, images: np.ndarray, batch_size: int = 16) -> list[ProbMask]:
    """Probability maps for a stack of prepared images (N, 3, H, W)."""
    dtype = next(model.decoder.parameters()).dtype
    out = []
    for i in range(0, len(images), batch_size):
        x = torch.as_tensor(images[i:i + batch_size], dtype=dtype)
        out.extend(ProbMask(p.double().numpy()) for p in model(x))
    return out
