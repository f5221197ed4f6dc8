"""Image preprocessing and heatmap target construction."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import TooFewSlices, ValidationError
from .io import Image2D, LabelSet, Volume3D


@dataclass(frozen=True)
class ClaheParams:
    tiles: tuple[int, int] = (8, 8)
    clip_factor: float = 2.0
    bins: int = 256

    def __post_init__(self):
        if len(self.tiles) != 2 or min(self.tiles) < 1:
            raise ValidationError(f"tiles must be two integers >= 1, got {self.tiles!r}")
        if self.clip_factor < 1:
            raise ValidationError("clip_factor must be >= 1")
        if self.bins < 2:
            raise ValidationError("bins must be >= 2")


@dataclass(frozen=True)
class TargetParams:
    sigma_px: float = 2.5
    support_px: float = 10.0
    peak: float = 1.0

    def __post_init__(self):
        if not self.sigma_px > 0:
            raise ValidationError("sigma_px must be positive")
        if self.support_px < 2 * self.sigma_px:
            raise ValidationError("support_px must be at least 2 * sigma_px")


def average_middle_slices(vol: Volume3D, n: int = 6) -> Image2D:
    """Mean of the ``n`` slices centred on ``slices // 2``.

    For n=6 these are indices S//2-3 ... S//2+2.
    """
    s = vol.slices
    if s < n:
        raise TooFewSlices(f"volume has {s} slices, need at least {n}")
    start = s // 2 - n // 2
    mean = vol.voxels[start:start + n].mean(axis=0)
    return Image2D(mean, vol.spacing_mm[1:])


def _linear_weights(n_in: int, n_out: int, step: float):
    # origin-aligned: output sample j sits at input coordinate j * step
    x = np.arange(n_out, dtype=np.float64) * step
    if n_in == 1:
        return np.zeros(n_out, dtype=int), np.zeros(n_out)
    i0 = np.clip(np.floor(x).astype(int), 0, n_in - 2)
    # frac may exceed 1 past the last sample: linear extrapolation keeps affine fields exact
    return i0, x - i0


def resample_isotropic(img: Image2D, target_mm: float = 1.0) -> Image2D:
    """Bilinear resampling to ``target_mm`` pixels.

    Output size is ``round(n * spacing / target_mm)`` per axis.  Sample ``j``
    is taken at input coordinate ``j * target_mm / spacing``; the last output
    samples may lie up to one input pixel past the edge, where the boundary
    segment is extended linearly.
    """
    if not target_mm > 0:
        raise ValidationError("target_mm must be positive")
    (sr, sc), (h, w) = img.spacing_mm, img.shape
    if sr == target_mm and sc == target_mm:
        return img
    oh = max(1, round(h * sr / target_mm))
    ow = max(1, round(w * sc / target_mm))
    px = img.pixels.astype(np.float64)
    r0, fr = _linear_weights(h, oh, target_mm / sr)
    c0, fc = _linear_weights(w, ow, target_mm / sc)
    if h > 1:
        rows = px[r0] * (1 - fr)[:, None] + px[r0 + 1] * fr[:, None]
    else:
        rows = px[r0]
    if w > 1:
        out = rows[:, c0] * (1 - fc)[None, :] + rows[:, c0 + 1] * fc[None, :]
    else:
        out = rows[:, c0]
    return Image2D(out, (target_mm, target_mm))


def crop_centered(img: Image2D, center, size: int = 141) -> tuple[Image2D, tuple[int, int]]:
    """``size`` x ``size`` window around ``center``, zero-filled outside the image.

    Returns the crop and the (row, col) offset of its top-left corner in the
    source image; callers shift labels by minus this offset.
    """
    r, c = center
    h, w = img.shape
    if not (0 <= r < h and 0 <= c < w):
        raise ValidationError(f"crop center ({r}, {c}) outside image of shape {h}x{w}")
    top = int(math.floor(r)) - size // 2
    left = int(math.floor(c)) - size // 2
    out = np.zeros((size, size), dtype=np.float32)
    sr0, sr1 = max(top, 0), min(top + size, h)
    sc0, sc1 = max(left, 0), min(left + size, w)
    out[sr0 - top:sr1 - top, sc0 - left:sc1 - left] = img.pixels[sr0:sr1, sc0:sc1]
    return Image2D(out, img.spacing_mm), (top, left)


# --- CLAHE -----------------------------------------------------------------

def _tile_edges(n: int, tiles: int) -> np.ndarray:
    size = -(-n // tiles)
    return np.append(np.arange(0, n, size), n)


def _normalize(px: np.ndarray) -> np.ndarray:
    lo, hi = px.min(), px.max()
    if hi > lo:
        return (px - lo) / (hi - lo)
    return np.zeros_like(px)


def clahe_mappings(img: Image2D, params: ClaheParams = ClaheParams()):
    """Per-tile lookup tables.

    Returns ``(luts, bin_index, row_edges, col_edges)`` where ``luts`` has
    shape (tile_rows, tile_cols, bins) and ``bin_index`` maps every pixel of
    the normalized image to its histogram bin.
    """
    x = _normalize(img.pixels.astype(np.float64))
    b = np.minimum((x * params.bins).astype(np.int64), params.bins - 1)
    re = _tile_edges(img.height, params.tiles[0])
    ce = _tile_edges(img.width, params.tiles[1])
    luts = np.empty((len(re) - 1, len(ce) - 1, params.bins))
    for i in range(len(re) - 1):
        for j in range(len(ce) - 1):
            tile = b[re[i]:re[i + 1], ce[j]:ce[j + 1]]
            hist = np.bincount(tile.ravel(), minlength=params.bins).astype(np.float64)
            clip = params.clip_factor * tile.size / params.bins
            excess = np.maximum(hist - clip, 0).sum()
            hist = np.minimum(hist, clip) + excess / params.bins
            cdf = np.cumsum(hist)
            luts[i, j] = cdf / cdf[-1]
    return luts, b, re, ce


def _interp_index(n: int, edges: np.ndarray):
    centers = (edges[:-1] + edges[1:] - 1) / 2.0
    pos = np.arange(n, dtype=np.float64)
    if len(centers) == 1:
        z = np.zeros(n, dtype=int)
        return z, z, np.zeros(n)
    hi = np.clip(np.searchsorted(centers, pos, side="right"), 1, len(centers) - 1)
    lo = hi - 1
    t = np.clip((pos - centers[lo]) / (centers[hi] - centers[lo]), 0.0, 1.0)
    return lo, hi, t


def clahe(img: Image2D, params: ClaheParams = ClaheParams()) -> Image2D:
    """Contrast limited adaptive histogram equalization.

    The image is min-max normalized, each tile's histogram is clipped at
    ``clip_factor * tile_pixels / bins`` with the excess spread evenly over all
    bins, and every pixel is mapped through a bilinear blend of the four
    nearest tile CDFs.  Tiles are sized by ceiling division, so the last row
    or column of tiles may be smaller.
    """
    luts, b, re, ce = clahe_mappings(img, params)
    r_lo, r_hi, tr = _interp_index(img.height, re)
    c_lo, c_hi, tc = _interp_index(img.width, ce)
    R = lambda a: a[:, None]  # noqa: E731
    C = lambda a: a[None, :]  # noqa: E731
    out = (
        (1 - R(tr)) * (1 - C(tc)) * luts[R(r_lo), C(c_lo), b]
        + (1 - R(tr)) * C(tc) * luts[R(r_lo), C(c_hi), b]
        + R(tr) * (1 - C(tc)) * luts[R(r_hi), C(c_lo), b]
        + R(tr) * C(tc) * luts[R(r_hi), C(c_hi), b]
    )
    return Image2D(np.clip(out, 0.0, 1.0), img.spacing_mm)


# --- targets ---------------------------------------------------------------

def make_target(labels: LabelSet, shape, params: TargetParams = TargetParams()) -> np.ndarray:
    """Max-combined Gaussian blobs, one per keypoint, truncated at ``support_px``."""
    h, w = shape
    labels.check_bounds(shape)
    out = np.zeros((h, w), dtype=np.float64)
    rr = np.arange(h, dtype=np.float64)[:, None]
    cc = np.arange(w, dtype=np.float64)[None, :]
    for p in labels:
        d2 = (rr - p.row) ** 2 + (cc - p.col) ** 2
        g = params.peak * np.exp(-d2 / (2 * params.sigma_px ** 2))
        g[d2 > params.support_px ** 2] = 0.0
        np.maximum(out, g, out=out)
    return out


def preprocess_image(img: Image2D, labels: LabelSet, center=None, size: int = 141,
                     target_mm: float = 1.0, clahe_params: ClaheParams = ClaheParams()):
    """Resample, crop and equalize one image, carrying its labels along.

    ``center`` is in the original pixel grid; defaults to the image center.
    """
    sr, sc = img.spacing_mm
    res = resample_isotropic(img, target_mm)
    lab = labels.shifted(0.0, 0.0, sr / target_mm, sc / target_mm)
    if center is None:
        center = ((res.height - 1) / 2, (res.width - 1) / 2)
    else:
        center = (center[0] * sr / target_mm, center[1] * sc / target_mm)
    cropped, (top, left) = crop_centered(res, center, size)
    lab = lab.shifted(-top, -left)
    lab.check_bounds(cropped.shape)
    return clahe(cropped, clahe_params), lab


def preprocess_dataset(manifest, out_dir, size: int = 141, target_mm: float = 1.0,
                       clahe_params: ClaheParams = ClaheParams()):
    """Apply :func:`preprocess_image` to every sample; writes images, labels and a manifest.

    Returns (manifest_path, manifest).
    """
    from pathlib import Path

    from .io import Manifest, Sample, ensure_dir, write_image, write_labels, write_manifest

    out = ensure_dir(out_dir)
    samples = []
    for s in manifest.samples:
        img, lab = preprocess_image(manifest.load_image(s), manifest.load_labels(s), s.center,
                                    size, target_mm, clahe_params)
        stem = Path(s.image_path).stem
        write_image(out / f"{stem}.i2f", img)
        write_labels(out / f"{stem}.json", lab)
        samples.append(Sample(f"{stem}.i2f", f"{stem}.json", s.split, s.contrast))
    result = Manifest(tuple(samples), out)
    path = out / "manifest.json"
    write_manifest(path, result)
    return path, result
