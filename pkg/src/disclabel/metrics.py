"""Keypoint matching under the 5 mm rule and dataset-level error rates."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyDataset, EmptyEvaluation
from .io import LabelSet, ensure_dir

REPORT_KEYS = ("split", "n_samples", "fnr", "fpr", "dist_mean_mm", "dist_std_mm", "dist_median_mm", "per_contrast")
CSV_COLUMNS = ("sample", "n_gt", "n_pred", "fp", "fn", "mean_si_mm")


@dataclass(frozen=True)
class Match:
    gt_index: int
    pred_index: int
    euclid_mm: float
    si_mm: float


@dataclass
class MatchResult:
    matches: list[Match] = field(default_factory=list)
    false_positives: list[int] = field(default_factory=list)
    false_negatives: list[int] = field(default_factory=list)
    n_gt: int = 0
    n_pred: int = 0


def _coords(points) -> np.ndarray:
    if isinstance(points, LabelSet):
        return points.coords()
    return np.asarray(points, dtype=np.float64).reshape(-1, 2)


def match_points(gt, pred, radius_mm: float = 5.0, spacing_mm=(1.0, 1.0)) -> MatchResult:
    """Greedy nearest matching, ground truth processed superior to inferior.

    A prediction is a candidate for a ground-truth point when it lies strictly
    closer than ``radius_mm`` (Euclidean, physical units).  Each ground-truth
    point takes its nearest still-unclaimed candidate (ties: smaller row, then
    smaller col).  Unclaimed predictions are false positives: either far from
    every ground-truth point or a duplicate in a group already matched.
    """
    g, p = _coords(gt), _coords(pred)
    sr, sc = spacing_mm
    gt_order = sorted(range(len(g)), key=lambda i: (g[i, 0], g[i, 1], i))
    pred_order = sorted(range(len(p)), key=lambda j: (p[j, 0], p[j, 1], j))
    taken = set()
    result = MatchResult(n_gt=len(g), n_pred=len(p))
    for i in gt_order:
        best = None
        for j in pred_order:
            if j in taken:
                continue
            d = math.hypot((p[j, 0] - g[i, 0]) * sr, (p[j, 1] - g[i, 1]) * sc)
            if d < radius_mm and (best is None or d < best[0]):
                best = (d, j)
        if best is None:
            result.false_negatives.append(i)
        else:
            d, j = best
            taken.add(j)
            result.matches.append(Match(i, j, d, (p[j, 0] - g[i, 0]) * sr))
    result.false_positives = [j for j in pred_order if j not in taken]
    result.false_negatives.sort()
    return result


def _dist_stats(si) -> dict:
    if len(si) == 0:
        return {"dist_mean_mm": None, "dist_std_mm": None, "dist_median_mm": None}
    a = np.abs(np.asarray(si, dtype=np.float64))
    return {"dist_mean_mm": float(a.mean()), "dist_std_mm": float(a.std()), "dist_median_mm": float(np.median(a))}


def _rates(results) -> dict:
    n_gt = sum(r.n_gt for r in results)
    n_pred = sum(r.n_pred for r in results)
    fn = sum(len(r.false_negatives) for r in results)
    fp = sum(len(r.false_positives) for r in results)
    out = {
        "fnr": fn / n_gt if n_gt else 0.0,
        "fpr": fp / n_pred if n_pred else 0.0,
        "n_gt": n_gt, "n_pred": n_pred, "n_fn": fn, "n_fp": fp,
    }
    out.update(_dist_stats([m.si_mm for r in results for m in r.matches]))
    return out


def compute_metrics(results, contrasts=None) -> dict:
    """FNR = FN / #gt, FPR = FP / #pred (0 without predictions), |S-I| distance stats."""
    results = list(results)
    if not results:
        raise EmptyEvaluation("no match results to aggregate")
    report = {"n_samples": len(results)}
    report.update(_rates(results))
    per = {}
    if contrasts is not None:
        for name in sorted(set(contrasts)):
            sub = [r for r, c in zip(results, contrasts) if c == name]
            per[name] = {"n_samples": len(sub), **_rates(sub)}
    report["per_contrast"] = per
    return report


def sample_row(name: str, r: MatchResult) -> dict:
    si = [abs(m.si_mm) for m in r.matches]
    return {"sample": name, "n_gt": r.n_gt, "n_pred": r.n_pred, "fp": len(r.false_positives),
            "fn": len(r.false_negatives), "mean_si_mm": float(np.mean(si)) if si else None}


def evaluate_predictions(pairs, split: str = "val", radius_mm: float = 5.0):
    """Score precomputed predictions.

    ``pairs`` yields ``(name, contrast, gt_labels, pred_coords, spacing_mm)``.
    Returns ``(report, rows)``.
    """
    results, contrasts, rows = [], [], []
    for name, contrast, gt, pred, spacing in pairs:
        r = match_points(gt, pred, radius_mm, spacing)
        results.append(r)
        contrasts.append(contrast)
        rows.append(sample_row(name, r))
    if not results:
        raise EmptyDataset(f"split {split!r} is empty")
    report = {"split": split, **compute_metrics(results, contrasts)}
    return report, rows


def evaluate_dataset(manifest, checkpoint, split: str = "val", out_dir=None, threshold: float = 0.5,
                     min_component_px: int = 3, radius_mm: float = 5.0, predictor=None):
    """Predict every sample of ``split`` and score it.

    ``checkpoint`` may be a Checkpoint or a path.  ``predictor`` overrides the
    network with any ``image -> heatmap`` callable.  When ``out_dir`` is given,
    ``report.json`` and ``samples.csv`` are written there.
    """
    from .model import load_checkpoint
    from .postprocess import extract_keypoints
    from .train import predict

    samples = manifest.split(split)
    if not samples:
        raise EmptyDataset(f"split {split!r} is empty")
    if predictor is None:
        ckpt = load_checkpoint(checkpoint) if isinstance(checkpoint, (str, Path)) else checkpoint
        model = ckpt.model()
        predictor = lambda im: predict(model, im)  # noqa: E731

    def pairs():
        for s in samples:
            img = manifest.load_image(s)
            pts = extract_keypoints(predictor(img), threshold, min_component_px)
            yield (Path(s.image_path).stem, s.contrast, manifest.load_labels(s),
                   [(q.row, q.col) for q in pts], img.spacing_mm)

    report, rows = evaluate_predictions(pairs(), split, radius_mm)
    if out_dir is not None:
        write_report(out_dir, report, rows)
    return report, rows


def write_report(out_dir, report: dict, rows=None) -> Path:
    out = ensure_dir(out_dir)
    with open(out / "report.json", "w", encoding="utf-8") as f:
        json.dump(report, f, indent=1, sort_keys=True)
        f.write("\n")
    if rows is not None:
        with open(out / "samples.csv", "w", newline="", encoding="utf-8") as f:
            w = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
            w.writeheader()
            for r in rows:
                w.writerow({k: ("" if r[k] is None else r[k]) for k in CSV_COLUMNS})
    return out / "report.json"


REPORT_SCHEMA = {
    "type": "object",
    "required": list(REPORT_KEYS),
    "properties": {
        "split": {"type": "string"},
        "n_samples": {"type": "integer", "minimum": 1},
        "fnr": {"type": "number", "minimum": 0, "maximum": 1},
        "fpr": {"type": "number", "minimum": 0, "maximum": 1},
        "dist_mean_mm": {"type": ["number", "null"], "minimum": 0},
        "dist_std_mm": {"type": ["number", "null"], "minimum": 0},
        "dist_median_mm": {"type": ["number", "null"], "minimum": 0},
        "per_contrast": {"type": "object"},
    },
}
