"""Images, masks, dataset manifests and their on-disk formats.

Images and masks are stored as binary P5 graymaps (maxval 255). Manifests are
either a tab-separated text file, one frame per line::

    patient_id<TAB>frame_id<TAB>image_path<TAB>mask_path|-<TAB>benign|malignant

or a JSON document ``{"frames": [{...}, ...]}`` with the same field names.
Relative paths resolve against the manifest's directory.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Optional, Union

import numpy as np

from .errors import ChannelError, ConsistencyError, FormatError, ParseError

PathLike = Union[str, Path]
PATHOLOGIES = ("benign", "malignant")
# U+2212 is accepted on input because it shows up in hand-edited manifests.
NO_MASK_TOKENS = ("-", "−")
MASK_THRESHOLD = 128


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Image:
    """Intensity grid of shape (H, W) or (H, W, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels)
        if p.ndim == 2:
            pass
        elif p.ndim == 3 and p.shape[2] in (1, 3):
            if p.shape[2] == 1:
                p = p[:, :, 0]
        else:
            raise ChannelError(f"unsupported image shape {p.shape}")
        if p.shape[0] * p.shape[1] == 0:
            raise FormatError("image has no pixels")
        object.__setattr__(self, "pixels", _frozen(p))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else 3


@dataclass(frozen=True, eq=False)
class BinaryMask:
    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 2:
            raise FormatError(f"mask must be 2-D, got shape {b.shape}")
        if b.dtype != bool:
            if not np.isin(b, (0, 1)).all():
                raise FormatError("mask values must be 0 or 1")
            b = b.astype(bool)
        object.__setattr__(self, "bits", _frozen(b))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True, eq=False)
class ProbMask:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 2:
            raise FormatError(f"probability map must be 2-D, got shape {p.shape}")
        if not ((p >= 0.0) & (p <= 1.0)).all():
            raise FormatError("probabilities must lie in [0, 1]")
        object.__setattr__(self, "probs", _frozen(p))

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape

    def threshold(self, tau: float = 0.5) -> BinaryMask:
        return BinaryMask(self.probs >= tau)


# ---------------------------------------------------------------------------
# P5 graymaps

_P5_HEADER = re.compile(rb"P5(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)\s")


def read_pgm(path: PathLike) -> np.ndarray:
    """Read an 8-bit binary graymap into a uint8 array of shape (H, W)."""
    data = Path(path).read_bytes()
    m = _P5_HEADER.match(data)
    if m is None:
        raise FormatError(f"{path}: not a binary P5 graymap")
    width, height, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval} != 255")
    body = data[m.end():]
    if len(body) != width * height:
        raise FormatError(f"{path}: expected {width * height} bytes of pixels, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path: PathLike, pixels: np.ndarray) -> None:
    a = np.asarray(pixels)
    if a.ndim != 2:
        raise FormatError(f"graymap must be 2-D, got shape {a.shape}")
    if a.dtype != np.uint8:
        if a.min() < 0 or a.max() > 255:
            raise FormatError("graymap values must be in [0, 255]")
        a = a.astype(np.uint8)
    header = b"P5\n%d %d\n255\n" % (a.shape[1], a.shape[0])
    Path(path).write_bytes(header + np.ascontiguousarray(a).tobytes())


def load_image(path: PathLike) -> Image:
    return Image(read_pgm(path))


def load_mask(path: PathLike) -> BinaryMask:
    return BinaryMask(read_pgm(path) >= MASK_THRESHOLD)


def save_image(path: PathLike, image: Image) -> None:
    if image.channels != 1:
        raise ChannelError("only single-channel images can be written as P5")
    write_pgm(path, image.pixels)


def save_mask(path: PathLike, mask: BinaryMask) -> None:
    write_pgm(path, mask.bits.astype(np.uint8) * 255)


# ---------------------------------------------------------------------------
# preprocessing

def normalize(image: Image) -> Image:
    """Per-frame Z-score with population std; constant frames map to zeros."""
    x = np.asarray(image.pixels, dtype=np.float64)
    mu = x.mean()
    sd = x.std()
    if sd == 0.0:
        return Image(np.zeros_like(x))
    return Image((x - mu) / sd)


def to_pseudo_rgb(image: Image) -> Image:
    if image.channels != 1:
        raise ChannelError("image already has 3 channels")
    return Image(np.repeat(image.pixels[:, :, None], 3, axis=2))


def _bilinear_axis(n_in: int, n_out: int):
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize(image: Image, height: int, width: int) -> Image:
    """Bilinear resize with half-pixel centres (align_corners=False)."""
    x = np.asarray(image.pixels, dtype=np.float64)
    r0, r1, wr = _bilinear_axis(x.shape[0], height)
    c0, c1, wc = _bilinear_axis(x.shape[1], width)
    if x.ndim == 3:
        wr = wr[:, None, None]
        wc = wc[None, :, None]
    else:
        wr = wr[:, None]
        wc = wc[None, :]
    top = x[r0][:, c0] * (1 - wc) + x[r0][:, c1] * wc
    bot = x[r1][:, c0] * (1 - wc) + x[r1][:, c1] * wc
    return Image(top * (1 - wr) + bot * wr)


def resize_mask(mask: BinaryMask, height: int, width: int) -> BinaryMask:
    rows = np.minimum((np.arange(height) + 0.5) * mask.height / height, mask.height - 1).astype(int)
    cols = np.minimum((np.arange(width) + 0.5) * mask.width / width, mask.width - 1).astype(int)
    return BinaryMask(mask.bits[rows][:, cols])


# ---------------------------------------------------------------------------
# manifests

@dataclass(frozen=True)
class FrameRecord:
    patient_id: str
    frame_id: str
    image_path: Path
    mask_path: Optional[Path]
    pathology: str

    def __post_init__(self):
        if self.pathology not in PATHOLOGIES:
            raise ParseError(f"unknown pathology {self.pathology!r}")

    @property
    def annotated(self) -> bool:
        return self.mask_path is not None


@dataclass(frozen=True)
class DatasetManifest:
    frames: tuple[FrameRecord, ...]
    patients: Mapping[str, tuple[FrameRecord, ...]] = field(init=False, repr=False)

    def __post_init__(self):
        frames = tuple(self.frames)
        object.__setattr__(self, "frames", frames)
        seen = set()
        groups: dict[str, list[FrameRecord]] = {}
        for fr in frames:
            key = (fr.patient_id, fr.frame_id)
            if key in seen:
                raise ConsistencyError(f"duplicate frame {key}")
            seen.add(key)
            groups.setdefault(fr.patient_id, []).append(fr)
        for pid, frs in groups.items():
            labels = {f.pathology for f in frs}
            if len(labels) > 1:
                raise ConsistencyError(f"patient {pid} has mixed pathology labels {sorted(labels)}")
        object.__setattr__(
            self, "patients", MappingProxyType({k: tuple(v) for k, v in groups.items()})
        )

    def __len__(self) -> int:
        return len(self.frames)

    def pathology_of(self, patient_id: str) -> str:
        return self.patients[patient_id][0].pathology

    def frames_for(self, patient_ids: Iterable[str], annotated_only: bool = False) -> list[FrameRecord]:
        """Frames of the given patients in manifest order."""
        wanted = set(patient_ids)
        return [
            f for f in self.frames
            if f.patient_id in wanted and (f.annotated or not annotated_only)
        ]


def _resolve(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q


def _check_paths(frames: Iterable[FrameRecord]) -> None:
    for f in frames:
        for p in (f.image_path, f.mask_path):
            if p is not None and not p.exists():
                raise ConsistencyError(f"frame {f.patient_id}/{f.frame_id}: missing file {p}")


def _parse_text(text: str, base: Path) -> list[FrameRecord]:
    frames = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.rstrip("\r\n").split("\t")
        if len(parts) != 5:
            raise ParseError(f"line {lineno}: expected 5 tab-separated fields, got {len(parts)}")
        pid, fid, img, msk, path_label = (s.strip() for s in parts)
        if not pid or not fid or not img:
            raise ParseError(f"line {lineno}: empty field")
        if path_label not in PATHOLOGIES:
            raise ParseError(f"line {lineno}: unknown pathology {path_label!r}")
        mask = None if msk in NO_MASK_TOKENS else _resolve(base, msk)
        frames.append(FrameRecord(pid, fid, _resolve(base, img), mask, path_label))
    return frames


def _parse_json(text: str, base: Path) -> list[FrameRecord]:
    try:
        doc = json.loads(text)
        rows = doc["frames"]
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise ParseError(f"malformed JSON manifest: {e}") from e
    frames = []
    for i, row in enumerate(rows):
        try:
            mask = row.get("mask_path")
            annotated = row.get("annotated", mask is not None)
            if bool(annotated) != (mask is not None):
                raise ConsistencyError(f"frame {i}: annotated={annotated} but mask_path={mask!r}")
            frames.append(FrameRecord(
                str(row["patient_id"]), str(row["frame_id"]),
                _resolve(base, row["image_path"]),
                None if mask is None else _resolve(base, mask),
                row["pathology"],
            ))
        except (KeyError, TypeError, AttributeError) as e:
            raise ParseError(f"frame {i}: {e}") from e
    return frames


def load_manifest(path: PathLike, check_paths: bool = True) -> DatasetManifest:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    base = path.parent
    if path.suffix == ".json" or text.lstrip().startswith("{"):
        frames = _parse_json(text, base)
    else:
        frames = _parse_text(text, base)
    manifest = DatasetManifest(tuple(frames))
    if check_paths:
        _check_paths(manifest.frames)
    return manifest


def _rel(p: Path, base: Path) -> str:
    try:
        return p.relative_to(base).as_posix()
    except ValueError:
        return str(p)


def save_manifest(path: PathLike, manifest: DatasetManifest) -> None:
    path = Path(path)
    base = path.parent
    if path.suffix == ".json":
        rows = [
            {
                "patient_id": f.patient_id,
                "frame_id": f.frame_id,
                "image_path": _rel(f.image_path, base),
                "mask_path": None if f.mask_path is None else _rel(f.mask_path, base),
                "annotated": f.annotated,
                "pathology": f.pathology,
            }
            for f in manifest.frames
        ]
        path.write_text(json.dumps({"frames": rows}, indent=1) + "\n", encoding="utf-8")
        return
    lines = ["# patient_id\tframe_id\timage_path\tmask_path\tpathology"]
    for f in manifest.frames:
        mask = "-" if f.mask_path is None else _rel(f.mask_path, base)
        lines.append("\t".join((f.patient_id, f.frame_id, _rel(f.image_path, base), mask, f.pathology)))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
