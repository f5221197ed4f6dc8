"""Domain types, file formats and dataset manifests.

Image files ("I2F"): an ASCII magic line ``I2F1``, one JSON header line
``{"h":H,"w":W,"spacing_mm":[r,c]}``, then H*W little-endian float32 values in
row-major order. Row 0 is the superior edge of the image.

Label files are JSON: ``{"points":[{"row":r,"col":c,"level":v,"name":s}]}``.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CorruptFile, EmptyDataset, FormatError, IoError, ValidationError

I2F_MAGIC = b"I2F1"
SPLITS = ("train", "test", "val")
CONTRASTS = ("T1w", "T2w", "synth")

_VERTEBRAE = (
    [f"C{i}" for i in range(1, 8)]
    + [f"T{i}" for i in range(1, 13)]
    + [f"L{i}" for i in range(1, 6)]
    + ["S1"]
)
MIN_LEVEL = 2
MAX_LEVEL = len(_VERTEBRAE)


def level_name(level: int) -> str:
    """Name of the disc between vertebrae ``level - 1`` and ``level`` (3 -> "C2-C3")."""
    if not isinstance(level, (int, np.integer)) or not MIN_LEVEL <= level <= MAX_LEVEL:
        raise ValidationError(f"disc level must be an integer in [{MIN_LEVEL}, {MAX_LEVEL}], got {level!r}")
    return f"{_VERTEBRAE[level - 2]}-{_VERTEBRAE[level - 1]}"


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Image2D:
    pixels: np.ndarray
    spacing_mm: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        px = np.array(self.pixels, dtype="<f4", copy=True)
        if px.ndim != 2 or px.size == 0:
            raise ValidationError(f"pixels must be a non-empty 2D array, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValidationError("pixel values must be finite")
        sp = tuple(float(s) for s in self.spacing_mm)
        if len(sp) != 2 or not all(s > 0 and math.isfinite(s) for s in sp):
            raise ValidationError(f"spacing_mm must be two positive reals, got {self.spacing_mm!r}")
        object.__setattr__(self, "pixels", _frozen(px))
        object.__setattr__(self, "spacing_mm", sp)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def __eq__(self, other):
        if not isinstance(other, Image2D):
            return NotImplemented
        return self.spacing_mm == other.spacing_mm and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True, eq=False)
class Volume3D:
    voxels: np.ndarray
    spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        vx = np.array(self.voxels, dtype=np.float64, copy=True)
        if vx.ndim != 3 or vx.size == 0:
            raise ValidationError(f"voxels must be a non-empty 3D array, got shape {vx.shape}")
        if not np.all(np.isfinite(vx)):
            raise ValidationError("voxel values must be finite")
        sp = tuple(float(s) for s in self.spacing_mm)
        if len(sp) != 3 or not all(s > 0 for s in sp):
            raise ValidationError(f"spacing_mm must be three positive reals, got {self.spacing_mm!r}")
        object.__setattr__(self, "voxels", _frozen(vx))
        object.__setattr__(self, "spacing_mm", sp)

    @property
    def slices(self) -> int:
        return self.voxels.shape[0]


@dataclass(frozen=True)
class KeypointLabel:
    row: float
    col: float
    level: int
    name: str = ""

    def __post_init__(self):
        expected = level_name(self.level)
        if not self.name:
            object.__setattr__(self, "name", expected)
        elif self.name != expected:
            raise ValidationError(f"level {self.level} is {expected!r}, not {self.name!r}")
        if not (math.isfinite(self.row) and math.isfinite(self.col)):
            raise ValidationError("keypoint coordinates must be finite")
        object.__setattr__(self, "row", float(self.row))
        object.__setattr__(self, "col", float(self.col))
        object.__setattr__(self, "level", int(self.level))


@dataclass(frozen=True)
class LabelSet:
    """Disc keypoints of one image, kept sorted superior to inferior."""

    points: tuple[KeypointLabel, ...] = ()

    def __post_init__(self):
        pts = tuple(sorted(self.points, key=lambda p: p.row))
        for a, b in zip(pts, pts[1:]):
            if not b.row > a.row:
                raise ValidationError(f"duplicate keypoint row {b.row}")
            if not b.level > a.level:
                raise ValidationError(f"levels must increase with row ({a.level} then {b.level})")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def coords(self) -> np.ndarray:
        return np.array([[p.row, p.col] for p in self.points], dtype=np.float64).reshape(-1, 2)

    def check_bounds(self, shape: Sequence[int]) -> None:
        h, w = shape
        for p in self.points:
            if not (0 <= p.row < h and 0 <= p.col < w):
                raise ValidationError(f"keypoint ({p.row}, {p.col}) outside image of shape {h}x{w}")

    def shifted(self, d_row: float, d_col: float, scale_row: float = 1.0, scale_col: float = 1.0) -> "LabelSet":
        """Coordinates mapped by ``x * scale + shift`` (scale applied first)."""
        return LabelSet(tuple(
            KeypointLabel(p.row * scale_row + d_row, p.col * scale_col + d_col, p.level, p.name)
            for p in self.points
        ))

    @classmethod
    def from_coords(cls, coords: Iterable[Sequence[float]], start_level: int = 3) -> "LabelSet":
        pts = sorted((float(r), float(c)) for r, c in coords)
        return cls(tuple(KeypointLabel(r, c, start_level + i) for i, (r, c) in enumerate(pts)))


# --- image files -----------------------------------------------------------

def write_image(path, image: Image2D) -> None:
    header = json.dumps(
        {"h": image.height, "w": image.width, "spacing_mm": list(image.spacing_mm)},
        separators=(",", ":"),
    )
    payload = np.ascontiguousarray(image.pixels, dtype="<f4").tobytes()
    try:
        with open(path, "wb") as f:
            f.write(I2F_MAGIC + b"\n" + header.encode("utf-8") + b"\n" + payload)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def read_image(path) -> Image2D:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    magic, sep, rest = data.partition(b"\n")
    if magic != I2F_MAGIC or not sep:
        raise FormatError(f"{path}: bad magic {magic[:16]!r}")
    header_line, sep, payload = rest.partition(b"\n")
    try:
        header = json.loads(header_line.decode("utf-8"))
        h, w = int(header["h"]), int(header["w"])
        spacing = tuple(header["spacing_mm"])
    except (ValueError, KeyError, TypeError) as e:
        raise CorruptFile(f"{path}: unreadable header: {e}") from e
    if not sep or h <= 0 or w <= 0 or len(payload) != 4 * h * w:
        raise CorruptFile(f"{path}: header says {h}x{w} but payload holds {len(payload) / 4:g} values")
    pixels = np.frombuffer(payload, dtype="<f4").reshape(h, w)
    try:
        return Image2D(pixels, spacing)
    except ValidationError as e:
        raise CorruptFile(f"{path}: {e}") from e


# --- label files -----------------------------------------------------------

def labels_to_dict(labels: LabelSet, source: str | None = None) -> dict:
    out = {"points": [{"row": p.row, "col": p.col, "level": p.level, "name": p.name} for p in labels]}
    if source is not None:
        out["source"] = source
    return out


def labels_from_dict(obj: dict) -> LabelSet:
    try:
        raw = obj["points"]
        pts = [KeypointLabel(float(d["row"]), float(d["col"]), int(d["level"]), str(d["name"])) for d in raw]
    except (KeyError, TypeError) as e:
        raise ValidationError(f"malformed label record: {e}") from e
    return LabelSet(tuple(pts))


def write_labels(path, labels: LabelSet, source: str | None = None) -> None:
    _write_json(path, labels_to_dict(labels, source))


def read_labels(path) -> LabelSet:
    return labels_from_dict(_read_json(path))


def _write_json(path, obj) -> None:
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(obj, f, indent=1, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON: {e}") from e


# --- manifests -------------------------------------------------------------

@dataclass(frozen=True)
class Sample:
    image_path: str
    labels_path: str
    split: str = "train"
    contrast: str = "synth"
    center: tuple[float, float] | None = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValidationError(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.contrast not in CONTRASTS:
            raise ValidationError(f"contrast must be one of {CONTRASTS}, got {self.contrast!r}")

    def to_dict(self) -> dict:
        d = {"image_path": self.image_path, "labels_path": self.labels_path,
             "split": self.split, "contrast": self.contrast}
        if self.center is not None:
            d["center"] = list(self.center)
        return d


@dataclass(frozen=True)
class Manifest:
    """Samples with paths relative to ``root`` (the manifest's directory)."""

    samples: tuple[Sample, ...]
    root: Path = field(default=Path("."))

    def split(self, name: str) -> list[Sample]:
        return [s for s in self.samples if s.split == name]

    def counts(self) -> tuple[int, int, int]:
        return tuple(len(self.split(n)) for n in SPLITS)

    def resolve(self, rel: str) -> Path:
        return Path(self.root) / rel

    def load_image(self, sample: Sample) -> Image2D:
        return read_image(self.resolve(sample.image_path))

    def load_labels(self, sample: Sample) -> LabelSet:
        return read_labels(self.resolve(sample.labels_path))


def write_manifest(path, manifest: Manifest) -> None:
    _write_json(path, {"samples": [s.to_dict() for s in manifest.samples]})


def read_manifest(path, check_paths: bool = True) -> Manifest:
    obj = _read_json(path)
    try:
        samples = tuple(
            Sample(d["image_path"], d["labels_path"], d["split"], d.get("contrast", "synth"),
                   tuple(d["center"]) if d.get("center") is not None else None)
            for d in obj["samples"]
        )
    except (KeyError, TypeError) as e:
        raise ValidationError(f"{path}: malformed manifest: {e}") from e
    m = Manifest(samples, Path(path).resolve().parent)
    if check_paths:
        for s in samples:
            for p in (s.image_path, s.labels_path):
                if not m.resolve(p).is_file():
                    raise IoError(f"{path}: missing file {p}")
    return m


def split_counts(n: int, fractions: Sequence[float] = (0.75, 0.10, 0.15)) -> tuple[int, int, int]:
    """Largest-remainder apportionment of ``n`` samples; ties go train, test, val."""
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError(f"fractions must be three non-negative reals summing to 1, got {fractions!r}")
    exact = [n * f for f in fractions]
    counts = [math.floor(x + 1e-9) for x in exact]
    remainders = [x - c for x, c in zip(exact, counts)]
    order = sorted(range(3), key=lambda i: (-remainders[i], i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return tuple(counts)


def split_manifest(samples: Sequence[Sample], fractions=(0.75, 0.10, 0.15), seed: int = 0,
                   root=".") -> Manifest:
    if len(samples) == 0:
        raise EmptyDataset("cannot split an empty sample list")
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ValidationError(f"seed must be an unsigned integer, got {seed!r}")
    n = len(samples)
    counts = split_counts(n, fractions)
    perm = np.random.default_rng(seed).permutation(n)
    split_of = np.empty(n, dtype=object)
    start = 0
    for name, c in zip(SPLITS, counts):
        split_of[perm[start:start + c]] = name
        start += c
    out = tuple(
        Sample(s.image_path, s.labels_path, str(split_of[i]), s.contrast, s.center)
        for i, s in enumerate(samples)
    )
    return Manifest(out, Path(root))


def ensure_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoError(f"cannot create directory {p}: {e}") from e
    if not os.access(p, os.W_OK):
        raise IoError(f"directory {p} is not writable")
    return p
