"""Synthetic ultrasound-like frames with elliptical lesions.

Each patient gets one lesion that drifts slightly from frame to frame, like
consecutive cine frames. Lesions are hypoechoic (darker than tissue by
``contrast``); malignant ones get an irregular, lobulated contour. Speckle is
multiplicative with a unit-mean Rayleigh distribution, and acoustic shadows are
dark wedges fanning down from a point on the top edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from .data import DatasetManifest, FrameRecord, save_manifest, write_pgm
from .config import check_schema, read_mapping
from .errors import ConfigError, SegBenchError


class IoError(SegBenchError, OSError):
    pass


RAYLEIGH_UNIT_MEAN_SCALE = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class SynthConfig:
    n_patients: int = 20
    frames_per_patient: int = 10
    image_size: int = 64
    # semi-axes as fractions of image_size
    lesion_radius: tuple[float, float] = (0.12, 0.26)
    speckle_strength: float = 0.5
    shadow_probability: float = 0.2
    malignant_fraction: float = 0.4
    seed: int = 0
    background_level: int = 150
    contrast: int = -90
    background_fraction: float = 0.0
    total_frames: Optional[int] = None
    write_files: bool = True

    def __post_init__(self):
        object.__setattr__(self, "lesion_radius", tuple(self.lesion_radius))
        lo, hi = self.lesion_radius
        if not (0 < lo <= hi < 0.5):
            raise ConfigError("lesion_radius must satisfy 0 < min <= max < 0.5")
        for name in ("shadow_probability", "malignant_fraction", "background_fraction"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.n_patients < 1 or self.image_size < 4:
            raise ConfigError("need at least one patient and image_size >= 4")
        if self.total_frames is None and self.frames_per_patient < 1:
            raise ConfigError("frames_per_patient must be positive")
        if self.total_frames is not None and self.total_frames < self.n_patients:
            raise ConfigError("total_frames must give every patient at least one frame")
        if self.speckle_strength < 0:
            raise ConfigError("speckle_strength must be non-negative")
        if not (0 <= self.background_level <= 255 and 0 <= self.background_level + self.contrast <= 255):
            raise ConfigError("background_level and background_level + contrast must be 8-bit values")


def synth_config_from_mapping(data) -> SynthConfig:
    data = check_schema(data, SynthConfig)
    if "preset" in data:
        raise ConfigError("synthetic configs take no preset")
    try:
        return SynthConfig(**data)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def load_synth_config(path) -> SynthConfig:
    return synth_config_from_mapping(read_mapping(path))


@dataclass(frozen=True)
class Lesion:
    cy: float
    cx: float
    ry: float
    rx: float
    angle: float
    lobes: tuple  # (amplitude, frequency, phase) triples; empty for benign


def _frame_counts(cfg: SynthConfig) -> list[int]:
    if cfg.total_frames is None:
        return [cfg.frames_per_patient] * cfg.n_patients
    base, extra = divmod(cfg.total_frames, cfg.n_patients)
    return [base + (1 if i < extra else 0) for i in range(cfg.n_patients)]


def lesion_mask(size: int, lesion: Lesion) -> np.ndarray:
    yy, xx = np.mgrid[:size, :size].astype(np.float64)
    dy, dx = yy - lesion.cy, xx - lesion.cx
    c, s = math.cos(lesion.angle), math.sin(lesion.angle)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    theta = np.arctan2(v, u)
    scale = np.ones_like(theta)
    for amp, freq, phase in lesion.lobes:
        scale += amp * np.sin(freq * theta + phase)
    return (u / lesion.rx) ** 2 + (v / lesion.ry) ** 2 <= scale ** 2


def _patient_lesion(rng: np.random.Generator, cfg: SynthConfig, malignant: bool) -> Lesion:
    n = cfg.image_size
    lo, hi = cfg.lesion_radius
    ry, rx = rng.uniform(lo, hi, size=2) * n
    reach = max(ry, rx) * (1.3 if malignant else 1.1) + 2
    cy = rng.uniform(reach, n - reach) if n - 2 * reach > 0 else n / 2
    cx = rng.uniform(reach, n - reach) if n - 2 * reach > 0 else n / 2
    lobes = ()
    if malignant:
        lobes = tuple(
            (float(rng.uniform(0.06, 0.14)), int(f), float(rng.uniform(0, 2 * np.pi)))
            for f in rng.choice([3, 4, 5, 6], size=2, replace=False)
        )
    return Lesion(cy, cx, ry, rx, float(rng.uniform(0, np.pi)), lobes)


def _jitter(rng: np.random.Generator, base: Lesion, n: int) -> Lesion:
    shift = 0.03 * n
    return Lesion(
        cy=base.cy + rng.uniform(-shift, shift),
        cx=base.cx + rng.uniform(-shift, shift),
        ry=base.ry * rng.uniform(0.92, 1.08),
        rx=base.rx * rng.uniform(0.92, 1.08),
        angle=base.angle + rng.uniform(-0.1, 0.1),
        lobes=base.lobes,
    )


def shadow_wedge(size: int, apex_x: float, direction: float, half_width: float) -> np.ndarray:
    """Pixels inside an angular sector hanging from (row 0, apex_x); angles in radians from vertical."""
    yy, xx = np.mgrid[:size, :size].astype(np.float64)
    ang = np.arctan2(xx - apex_x, yy + 0.5)
    return np.abs(ang - direction) <= half_width


def render_frame(rng: np.random.Generator, cfg: SynthConfig, lesion: Optional[Lesion]) -> tuple[np.ndarray, Optional[np.ndarray]]:
    n = cfg.image_size
    mask = None if lesion is None else lesion_mask(n, lesion)
    img = np.full((n, n), float(cfg.background_level))
    if mask is not None:
        img[mask] += cfg.contrast
    if cfg.speckle_strength > 0:
        r = rng.rayleigh(RAYLEIGH_UNIT_MEAN_SCALE, size=(n, n))
        r = gaussian_filter(r, sigma=0.7, mode="reflect")
        img *= np.clip(1.0 + cfg.speckle_strength * (r - 1.0), 0.0, None)
    if cfg.shadow_probability > 0 and rng.random() < cfg.shadow_probability:
        wedge = shadow_wedge(n, rng.uniform(0, n), rng.uniform(-0.3, 0.3), rng.uniform(0.05, 0.15))
        img[wedge] *= rng.uniform(0.3, 0.6)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), mask


def synth_generate(cfg: SynthConfig, out_dir) -> DatasetManifest:
    """Write images, masks and ``manifest.tsv`` under ``out_dir``; deterministic per seed."""
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoError(f"cannot create output directory {out}: {e}") from e

    root = np.random.default_rng([cfg.seed, 0])
    n_malignant = round(cfg.malignant_fraction * cfg.n_patients)
    malignant = set(root.permutation(cfg.n_patients)[:n_malignant].tolist())
    counts = _frame_counts(cfg)
    slots = [(p, f) for p in range(cfg.n_patients) for f in range(counts[p])]
    n_background = round(cfg.background_fraction * len(slots))
    background = {slots[i] for i in root.permutation(len(slots))[:n_background].tolist()}

    frames = []
    pw = max(3, len(str(cfg.n_patients - 1)))
    for p in range(cfg.n_patients):
        pid = f"P{p:0{pw}d}"
        pathology = "malignant" if p in malignant else "benign"
        prng = np.random.default_rng([cfg.seed, 1, p])
        base = _patient_lesion(prng, cfg, p in malignant)
        fw = max(3, len(str(counts[p] - 1)))
        for f in range(counts[p]):
            fid = f"F{f:0{fw}d}"
            frng = np.random.default_rng([cfg.seed, 2, p, f])
            lesion = None if (p, f) in background else _jitter(frng, base, cfg.image_size)
            img, mask = render_frame(frng, cfg, lesion)
            img_path = out / "images" / f"{pid}_{fid}.pgm"
            mask_path = None if mask is None else out / "masks" / f"{pid}_{fid}.pgm"
            if cfg.write_files:
                try:
                    write_pgm(img_path, img)
                    if mask is not None:
                        write_pgm(mask_path, mask.astype(np.uint8) * 255)
                except OSError as e:
                    raise IoError(str(e)) from e
            frames.append(FrameRecord(pid, fid, img_path, mask_path, pathology))
    manifest = DatasetManifest(tuple(frames))
    try:
        save_manifest(out / "manifest.tsv", manifest)
    except OSError as e:
        raise IoError(str(e)) from e
    return manifest
