"""Heatmap -> disc keypoints: threshold, 8-connected components, weighted centroid."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .io import KeypointLabel, LabelSet

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class DetectedPoint:
    row: float
    col: float
    mass: float
    component_size: int
    bbox: tuple[int, int, int, int] = (0, 0, 0, 0)  # row0, col0, row1, col1 inclusive


def extract_keypoints(heatmap, threshold: float = 0.5, min_component_px: int = 3) -> list[DetectedPoint]:
    hm = np.asarray(heatmap, dtype=np.float64)
    mask = hm >= threshold
    lab, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
    if n == 0:
        return []
    index = np.arange(1, n + 1)
    sizes = ndimage.sum_labels(mask, lab, index)
    masses = ndimage.sum_labels(hm, lab, index)
    centers = ndimage.center_of_mass(hm, lab, index)
    slices = ndimage.find_objects(lab)
    out = []
    for size, mass, (r, c), sl in zip(sizes, masses, centers, slices):
        if size < min_component_px or not mass > 0:
            continue
        r0, c0, r1, c1 = sl[0].start, sl[1].start, sl[0].stop - 1, sl[1].stop - 1
        # clamp away rounding drift so a centroid never leaves its own bounding box
        r, c = min(max(float(r), r0), r1), min(max(float(c), c0), c1)
        out.append(DetectedPoint(r, c, float(mass), int(size), (r0, c0, r1, c1)))
    out.sort(key=lambda p: (p.row, p.col))
    return out


def assign_levels(points, start_level: int = 3) -> LabelSet:
    """Consecutive disc levels from the most superior point down."""
    coords = sorted((p.row, p.col) if hasattr(p, "row") else (float(p[0]), float(p[1])) for p in points)
    return LabelSet(tuple(KeypointLabel(r, c, start_level + i) for i, (r, c) in enumerate(coords)))


def heatmap_to_labels(heatmap, threshold: float = 0.5, min_component_px: int = 3,
                      start_level: int = 3) -> LabelSet:
    return assign_levels(extract_keypoints(heatmap, threshold, min_component_px), start_level)
