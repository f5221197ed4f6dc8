"""Synthetic sagittal spine phantoms with exact disc keypoints.

Anatomy analogue, left to right (anterior to posterior): background soft
tissue, a band of vertebral bodies holding elliptical discs, a thin ligament
gap, then the cord column.  The keypoint of each disc is its posterior tip.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .io import (Image2D, KeypointLabel, LabelSet, Sample, ensure_dir, split_manifest,
                 write_image, write_labels, write_manifest)

DISC_HALF_SI = 3.0
DISC_HALF_AP = 7.0
CORD_HALF_WIDTH = 4.0
LIGAMENT_GAP = 4.0
BAND_WIDTH = 26.0
START_LEVEL = 3

# (background, vertebra, disc, cord)
INTENSITIES = {
    "t1_like": (0.30, 0.55, 0.15, 0.80),
    "t2_like": (0.25, 0.40, 0.85, 0.20),
}


@dataclass(frozen=True)
class PhantomConfig:
    size: int = 141
    disc_count_range: tuple[int, int] = (6, 7)
    disc_spacing_range_px: tuple[float, float] = (14.0, 20.0)
    curvature_amplitude_px: float = 5.0
    noise_sigma: float = 0.05
    contrast_mode: str = "t1_like"
    bias_field_amplitude: float = 0.2

    def __post_init__(self):
        lo, hi = self.disc_count_range
        slo, shi = self.disc_spacing_range_px
        if self.size < 64:
            raise ValidationError("phantom size must be >= 64")
        if not 1 <= lo <= hi:
            raise ValidationError(f"bad disc_count_range {self.disc_count_range!r}")
        if not 10 <= slo <= shi or math.ceil(slo) > math.floor(shi):
            raise ValidationError(f"bad disc_spacing_range_px {self.disc_spacing_range_px!r}")
        if hi * shi > self.size:
            raise ValidationError("disc_count * max spacing must fit in the image height")
        if self.contrast_mode not in INTENSITIES:
            raise ValidationError(f"contrast_mode must be one of {sorted(INTENSITIES)}")
        if not 0 <= self.bias_field_amplitude < 1:
            raise ValidationError("bias_field_amplitude must lie in [0, 1)")
        if self.noise_sigma < 0 or self.curvature_amplitude_px < 0:
            raise ValidationError("noise_sigma and curvature_amplitude_px must be non-negative")


def _centerline(rng, size, amplitude):
    period = rng.uniform(1.5, 3.0) * size
    phase = rng.uniform(0, 2 * np.pi)
    base = 0.62 * size
    rows = np.arange(size, dtype=np.float64)
    return base + amplitude * np.sin(2 * np.pi * rows / period + phase)


def _bias_field(rng, size, amplitude):
    u = np.linspace(-1, 1, size)
    r, c = np.meshgrid(u, u, indexing="ij")
    a = rng.uniform(-1, 1, size=5)
    poly = a[0] * r + a[1] * c + a[2] * r * c + a[3] * (r ** 2 - 0.5) + a[4] * (c ** 2 - 0.5)
    peak = np.abs(poly).max()
    if peak > 0:
        poly /= peak
    return 1.0 + amplitude * poly


def render_clean(config: PhantomConfig, rng: np.random.Generator):
    """Noise- and bias-free phantom plus its labels and cord intensity."""
    size = config.size
    bg, vert, disc, cord = INTENSITIES[config.contrast_mode]
    center = _centerline(rng, size, config.curvature_amplitude_px)

    n = int(rng.integers(config.disc_count_range[0], config.disc_count_range[1] + 1))
    slo, shi = config.disc_spacing_range_px
    gaps = rng.integers(math.ceil(slo), math.floor(shi) + 1, size=n - 1)
    span = int(gaps.sum())
    margin = int(DISC_HALF_SI) + 3
    first = int(rng.integers(margin, max(margin, size - 1 - margin - span) + 1))
    disc_rows = first + np.concatenate([[0], np.cumsum(gaps)]).astype(int)

    rr, cc = np.meshgrid(np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64), indexing="ij")
    cl = center[:, None]
    img = np.full((size, size), bg)
    cord_front = cl - CORD_HALF_WIDTH
    band = (cc < cord_front - LIGAMENT_GAP + 1) & (cc >= cord_front - LIGAMENT_GAP - BAND_WIDTH)
    img[band] = vert
    img[np.abs(cc - cl) <= CORD_HALF_WIDTH] = cord

    points = []
    for i, row in enumerate(disc_rows):
        tip_col = round(center[row] - CORD_HALF_WIDTH - LIGAMENT_GAP)
        ccol = tip_col - DISC_HALF_AP
        inside = ((rr - row) / DISC_HALF_SI) ** 2 + ((cc - ccol) / DISC_HALF_AP) ** 2 <= 1.0
        img[inside] = disc
        points.append(KeypointLabel(float(row), float(tip_col), START_LEVEL + i))
    return img, LabelSet(tuple(points)), cord, center


def generate_phantom(config: PhantomConfig, seed: int) -> tuple[Image2D, LabelSet]:
    rng = np.random.default_rng(seed)
    clean, labels, cord, _ = render_clean(config, rng)
    # every keypoint's 5x5 neighbourhood has to stand out from the cord under noise
    for p in labels:
        r, c = int(p.row), int(p.col)
        local = clean[max(r - 2, 0):r + 3, max(c - 2, 0):c + 3].mean()
        if abs(local - cord) < 3 * config.noise_sigma:
            raise ValidationError(
                f"keypoint at ({r}, {c}) not separable from cord at noise_sigma={config.noise_sigma}")
    img = clean * _bias_field(rng, config.size, config.bias_field_amplitude)
    img = img + rng.normal(0.0, config.noise_sigma, size=img.shape)
    return Image2D(np.clip(img, 0.0, 1.0), (1.0, 1.0)), labels


def generate_dataset(config: PhantomConfig, n: int, out_dir, seed: int = 0,
                     fractions=(0.75, 0.10, 0.15)):
    """Write ``n`` phantoms (seeds ``seed .. seed+n-1``) and a split manifest.

    Contrast modes alternate t1_like / t2_like.  Returns (manifest_path, manifest).
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    out = ensure_dir(out_dir)
    samples = []
    for i in range(n):
        mode = "t1_like" if i % 2 == 0 else "t2_like"
        cfg = PhantomConfig(**{**config.__dict__, "contrast_mode": mode})
        img, labels = generate_phantom(cfg, seed + i)
        stem = f"phantom_{i:04d}"
        write_image(out / f"{stem}.i2f", img)
        write_labels(out / f"{stem}.json", labels)
        c = (config.size - 1) / 2
        samples.append(Sample(f"{stem}.i2f", f"{stem}.json", contrast="synth", center=(c, c)))
    manifest = split_manifest(samples, fractions, seed, root=out)
    path = out / "manifest.json"
    write_manifest(path, manifest)
    return path, manifest
