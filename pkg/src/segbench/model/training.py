"""Decoder training loop: AdamW with a per-step cosine-annealed learning rate.

Since the encoder is frozen and inputs are not augmented, encoder features
are computed once per frame and reused every epoch.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from ..config import ExperimentConfig
from ..data import DatasetManifest, FrameRecord, load_image, load_mask
from ..errors import DivergenceError, EmptyInput
from ..metrics import aggregate, metrics_from_masks
from .encoder import PRESETS
from .loss import LossWeights, bce_dice_loss
from .network import SegmentationModel, prepare_image, prepare_mask

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("epoch", "train_loss", "lr", "val_dice", "val_iou", "val_sensitivity", "val_hd95", "val_msd")


@dataclass
class FrameSet:
    """Prepared images (N, 3, H, W) and masks (N, H, W), plus their ids."""

    images: np.ndarray
    masks: np.ndarray
    ids: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.images)

    def subset(self, idx) -> "FrameSet":
        idx = list(idx)
        return FrameSet(self.images[idx], self.masks[idx], [self.ids[i] for i in idx] if self.ids else [])


def load_frames(records: Sequence[FrameRecord], resolution: Optional[int] = None) -> FrameSet:
    """Read annotated frames; unannotated (background) ones are skipped."""
    recs = [r for r in records if r.annotated]
    if not recs:
        return FrameSet(np.zeros((0, 3, 1, 1), np.float32), np.zeros((0, 1, 1), np.float32), [])
    images = np.stack([prepare_image(load_image(r.image_path).pixels, resolution) for r in recs])
    masks = np.stack([prepare_mask(load_mask(r.mask_path), resolution) for r in recs])
    return FrameSet(images.astype(np.float32), masks, [(r.patient_id, r.frame_id) for r in recs])


def frames_for_patients(manifest: DatasetManifest, patients, resolution: Optional[int] = None) -> FrameSet:
    return load_frames(manifest.frames_for(patients, annotated_only=True), resolution)


@dataclass
class LearningCurve:
    rows: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def values(self, key: str = "val_dice") -> list:
        return [r[key] for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for r in self.rows:
            w.writerow(["" if r[c] is None else repr(r[c]) for c in CURVE_COLUMNS])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "LearningCurve":
        rows = []
        for r in csv.DictReader(io.StringIO(text)):
            row = {c: (None if r[c] == "" else float(r[c])) for c in CURVE_COLUMNS}
            row["epoch"] = int(row["epoch"])
            rows.append(row)
        return cls(rows)


@dataclass
class TrainResult:
    model: SegmentationModel
    curve: LearningCurve


def build_model(config: ExperimentConfig, dtype=torch.float32) -> SegmentationModel:
    model = SegmentationModel(PRESETS[config.backbone_scale], layer_picks=config.layer_picks, seed=config.seed)
    return model.to(dtype)


@torch.no_grad()
def encode_all(model: SegmentationModel, images: np.ndarray, batch_size: int = 32) -> list[torch.Tensor]:
    dtype = next(model.decoder.parameters()).dtype
    chunks = [model.encode(torch.as_tensor(images[i:i + batch_size], dtype=dtype))
              for i in range(0, len(images), batch_size)]
    return [torch.cat([c[k] for c in chunks]) for k in range(4)]


@torch.no_grad()
def decode_probs(model: SegmentationModel, maps, size, batch_size: int = 32) -> np.ndarray:
    n = len(maps[0])
    out = []
    for i in range(0, n, batch_size):
        batch = [m[i:i + batch_size] for m in maps]
        out.append(torch.sigmoid(model.decode_logits(batch, size)).double().numpy())
    return np.concatenate(out) if out else np.zeros((0, *size))


def evaluate_maps(model, maps, masks: np.ndarray, tau: float = 0.5):
    probs = decode_probs(model, maps, masks.shape[-2:])
    return [metrics_from_masks(p >= tau, m > 0.5) for p, m in zip(probs, masks)]


def cosine_lr(base_lr: float, step: int, total: int) -> float:
    return 0.5 * base_lr * (1 + math.cos(math.pi * step / total))


def train(config: ExperimentConfig, train_set: FrameSet, val_set: FrameSet,
          model: Optional[SegmentationModel] = None) -> TrainResult:
    if len(train_set) == 0 or len(val_set) == 0:
        raise EmptyInput("training needs nonempty train and validation frames")
    was_deterministic = torch.are_deterministic_algorithms_enabled()
    torch.use_deterministic_algorithms(True)
    try:
        return _train(config, train_set, val_set, model)
    finally:
        torch.use_deterministic_algorithms(was_deterministic)


def _train(config, train_set, val_set, model) -> TrainResult:
    model = model or build_model(config)
    weights = LossWeights(config.lambda_bce, config.lambda_dice, config.eps_dice)
    params = model.trainable_parameters()
    opt = torch.optim.AdamW(params, lr=config.lr, betas=config.adam_betas,
                            eps=config.adam_eps, weight_decay=config.weight_decay)
    size = tuple(train_set.masks.shape[-2:])
    train_maps = encode_all(model, train_set.images)
    val_maps = encode_all(model, val_set.images)
    targets = torch.as_tensor(train_set.masks, dtype=train_maps[0].dtype)

    n = len(train_set)
    steps_per_epoch = math.ceil(n / config.batch_size)
    total = steps_per_epoch * config.epochs
    gen = torch.Generator().manual_seed(config.seed)
    curve = LearningCurve()
    step = 0
    for epoch in range(config.epochs):
        model.decoder.train()
        order = torch.randperm(n, generator=gen)
        losses = []
        for s in range(steps_per_epoch):
            idx = order[s * config.batch_size:(s + 1) * config.batch_size]
            lr = cosine_lr(config.lr, step, total)
            for g in opt.param_groups:
                g["lr"] = lr
            logits = model.decode_logits([m[idx] for m in train_maps], size)
            loss = bce_dice_loss(torch.sigmoid(logits), targets[idx], weights)
            if not torch.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, step {s}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            losses.append(loss.item())
            step += 1
        model.decoder.eval()
        summary = aggregate(evaluate_maps(model, val_maps, val_set.masks, config.threshold))
        row = {
            "epoch": epoch + 1,
            "train_loss": math.fsum(losses) / len(losses),
            "lr": lr,
            **{f"val_{k}": summary.get(k) for k in ("dice", "iou", "sensitivity", "hd95", "msd")},
        }
        curve.rows.append(row)
        log.info("epoch %d loss %.4f val dice %.4f", row["epoch"], row["train_loss"], row["val_dice"])
    return TrainResult(model, curve)
