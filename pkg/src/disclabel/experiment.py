"""Desk-scale experiment: phantom data, the full model and its two ablation arms.

Every arm goes through the same ``train`` -> ``evaluate_dataset`` path; only
the loss weights or the redundant-counting flag differ.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from .io import ensure_dir
from .losses import L1_ONLY, LossWeights
from .metrics import evaluate_dataset
from .model import ModelConfig
from .phantom import PhantomConfig, generate_dataset
from .preprocess import preprocess_dataset
from .train import TrainConfig, train

ARMS = ("full", "l1_only", "no_redundant_counting")


@dataclass(frozen=True)
class DeskConfig:
    n_phantoms: int = 100
    fractions: tuple[float, float, float] = (0.8, 0.0, 0.2)  # 80 train, 20 held out
    data_seed: int = 0
    train_seed: int = 0
    epochs: int = 8
    batch_size: int = 4
    learning_rate: float = 3e-3
    width_scale: float = 0.25


def prepare_data(cfg: DeskConfig, out_dir):
    """Generate phantoms under ``out_dir/raw`` and preprocess them into ``out_dir/pp``."""
    out = ensure_dir(out_dir)
    _, raw = generate_dataset(PhantomConfig(), cfg.n_phantoms, out / "raw", cfg.data_seed, cfg.fractions)
    _, pp = preprocess_dataset(raw, out / "pp")
    return pp


def arm_configs(arm: str, cfg: DeskConfig) -> tuple[ModelConfig, TrainConfig]:
    if arm not in ARMS:
        raise ValueError(f"unknown arm {arm!r}; expected one of {ARMS}")
    tcfg = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, learning_rate=cfg.learning_rate,
                       seed=cfg.train_seed, width_scale=cfg.width_scale, checkpoint_every=0,
                       loss_weights=L1_ONLY if arm == "l1_only" else LossWeights())
    mcfg = ModelConfig(redundant_counting=arm != "no_redundant_counting")
    return mcfg, tcfg


def run_arm(manifest, arm: str, cfg: DeskConfig, out_dir, progress=None) -> dict:
    """Train one arm, evaluate it on the val split and write ``report.json`` there.

    Returns the report plus ``train_seconds`` (kept out of the written file so
    reports stay bitwise reproducible).
    """
    mcfg, tcfg = arm_configs(arm, cfg)
    out = ensure_dir(out_dir)
    t0 = time.perf_counter()
    ckpt, _ = train(manifest, mcfg, tcfg, out, progress=progress)
    seconds = time.perf_counter() - t0
    report, _ = evaluate_dataset(manifest, ckpt, "val", out)
    return {**report, "arm": arm, "train_seconds": seconds}


def summary_table(reports: dict) -> str:
    """Plain-text table of the three headline metrics per arm."""
    lines = [f"{'arm':<24}{'fnr':>8}{'fpr':>8}{'si_mean_mm':>12}"]
    for arm, r in reports.items():
        dist = "n/a" if r["dist_mean_mm"] is None else f"{r['dist_mean_mm']:.3f}"
        lines.append(f"{arm:<24}{r['fnr']:>8.3f}{r['fpr']:>8.3f}{dist:>12}")
    return "\n".join(lines)


def run_desk_experiment(out_dir, cfg: DeskConfig = DeskConfig(), arms=ARMS, progress=None) -> dict:
    out = ensure_dir(out_dir)
    manifest = prepare_data(cfg, out / "data")
    reports = {arm: run_arm(manifest, arm, cfg, out / arm, progress) for arm in arms}
    with open(Path(out) / "config.json", "w", encoding="utf-8") as f:
        json.dump(asdict(cfg), f, indent=1)
        f.write("\n")
    return reports


def with_overrides(cfg: DeskConfig, **kw) -> DeskConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
