"""Heatmap overlays: grayscale image with a red-to-yellow heatmap alpha-blended on top."""
from __future__ import annotations

import numpy as np
from PIL import Image, ImageDraw

from .errors import IoError, ShapeError


def overlay_rgba(image: np.ndarray, heatmap: np.ndarray) -> np.ndarray:
    """uint8 RGBA array; heatmap value v is drawn as colour (1, v, 0) with opacity v."""
    img = np.asarray(image, dtype=np.float64)
    hm = np.clip(np.asarray(heatmap, dtype=np.float64), 0.0, 1.0)
    if img.shape != hm.shape:
        raise ShapeError(f"image shape {img.shape} != heatmap shape {hm.shape}")
    lo, hi = img.min(), img.max()
    gray = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
    gray = np.round(gray * 255)
    color = np.stack([np.full_like(hm, 255.0), 255.0 * hm, np.zeros_like(hm)], axis=-1)
    a = hm[..., None]
    rgb = np.round((1 - a) * gray[..., None] + a * color)
    out = np.empty(img.shape + (4,), dtype=np.uint8)
    out[..., :3] = np.clip(rgb, 0, 255).astype(np.uint8)
    out[..., 3] = 255
    return out


def render_overlay(image, heatmap, out_path, labels=None) -> None:
    """Write the overlay as an 8-bit RGBA PNG of the input's size.

    ``labels`` (optional LabelSet) are marked with single cyan pixels.
    """
    px = image.pixels if hasattr(image, "pixels") else image
    rgba = overlay_rgba(px, heatmap)
    pil = Image.fromarray(rgba, mode="RGBA")
    if labels is not None:
        draw = ImageDraw.Draw(pil)
        for p in labels:
            draw.point((round(p.col), round(p.row)), fill=(0, 255, 255, 255))
    try:
        pil.save(out_path, format="PNG")
    except OSError as e:
        raise IoError(f"cannot write {out_path}: {e}") from e
