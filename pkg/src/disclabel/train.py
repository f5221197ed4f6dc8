"""Deterministic training loop and single-image prediction."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch

from .errors import DivergenceError, EmptyDataset, ShapeError, ValidationError
from .io import Image2D, LabelSet, ensure_dir
from .losses import AWingParams, LossWeights, composite_loss
from .model import Checkpoint, HeatmapNet, ModelConfig, load_checkpoint, save_checkpoint
from .preprocess import TargetParams, make_target

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 8
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    loss_weights: LossWeights = LossWeights()
    awing: AWingParams = AWingParams()
    target: TargetParams = TargetParams()
    checkpoint_every: int = 50
    width_scale: float | None = None
    augment: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValidationError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown training config keys: {sorted(unknown)}")
        d = dict(d)
        nested = {"loss_weights": LossWeights, "awing": AWingParams, "target": TargetParams}
        for key, typ in nested.items():
            if isinstance(d.get(key), dict):
                d[key] = typ(**d[key])
            elif isinstance(d.get(key), (list, tuple)):
                d[key] = typ(*d[key])
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def load_split(manifest, split: str, target: TargetParams):
    """Stacked images, targets and label sets of one split."""
    samples = manifest.split(split)
    images, targets, labels = [], [], []
    for s in samples:
        img = manifest.load_image(s)
        lab = manifest.load_labels(s)
        images.append(img.pixels)
        targets.append(make_target(lab, img.shape, target))
        labels.append(lab)
    if images and len({im.shape for im in images}) != 1:
        raise ShapeError(f"all {split} images must share one shape")
    if not images:
        return np.zeros((0, 1, 1), np.float32), np.zeros((0, 1, 1), np.float32), []
    return np.stack(images).astype(np.float32), np.stack(targets).astype(np.float32), labels


def _augment(images, labels, cfg: TrainConfig, epoch: int):
    """Random horizontal flips and +-5 px shifts, targets rebuilt from moved labels."""
    rng = np.random.default_rng([cfg.seed, epoch, 1])
    n, h, w = images.shape
    out_i = np.zeros_like(images)
    out_t = np.zeros_like(images)
    for k in range(n):
        im = images[k]
        lab = labels[k]
        if rng.random() < 0.5:
            im = im[:, ::-1]
            lab = LabelSet(tuple(
                type(p)(p.row, w - 1 - p.col, p.level, p.name) for p in lab))
        dr, dc = (int(v) for v in rng.integers(-5, 6, size=2))
        shifted = np.zeros_like(im)
        shifted[max(dr, 0):h + min(dr, 0), max(dc, 0):w + min(dc, 0)] = \
            im[max(-dr, 0):h + min(-dr, 0), max(-dc, 0):w + min(-dc, 0)]
        kept = tuple(
            type(p)(p.row + dr, p.col + dc, p.level, p.name) for p in lab
            if 0 <= p.row + dr < h and 0 <= p.col + dc < w)
        out_i[k] = shifted
        out_t[k] = make_target(LabelSet(kept), (h, w), cfg.target)
    return out_i, out_t


def _make_optimizer(model, cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return torch.optim.SGD(model.parameters(), lr=cfg.learning_rate)
    return torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=cfg.betas, eps=cfg.eps)


def _optimizer_state(model, opt) -> dict | None:
    if not isinstance(opt, torch.optim.Adam):
        return None
    params = list(model.parameters())
    if not all(p in opt.state for p in params):
        return None
    st = [opt.state[p] for p in params]
    return {"step": int(st[0]["step"]), "exp_avg": [s["exp_avg"].clone() for s in st],
            "exp_avg_sq": [s["exp_avg_sq"].clone() for s in st]}


def _restore_optimizer(model, opt, saved) -> None:
    if saved is None or not isinstance(opt, torch.optim.Adam):
        return
    for p, m, v in zip(model.parameters(), saved["exp_avg"], saved["exp_avg_sq"]):
        opt.state[p] = {"step": torch.tensor(float(saved["step"])), "exp_avg": m.clone(), "exp_avg_sq": v.clone()}


def _snapshot(model, opt, cfg: TrainConfig, epoch: int, history) -> Checkpoint:
    meta = {"epoch": epoch, "seed": cfg.seed, "history": list(history), "train_config": cfg.to_dict()}
    return Checkpoint.from_model(model, meta, _optimizer_state(model, opt))


def validation_loss(model, images, targets, cfg: TrainConfig) -> float | None:
    """Mean composite loss in eval mode; parameters and batch-norm statistics untouched."""
    if len(images) == 0:
        return None
    was_training = model.training
    model.eval()
    total = 0.0
    with torch.no_grad():
        for s in range(0, len(images), cfg.batch_size):
            x = torch.from_numpy(images[s:s + cfg.batch_size])
            y = torch.from_numpy(targets[s:s + cfg.batch_size])
            total += float(composite_loss(model(x), y, cfg.loss_weights, cfg.awing)) * len(x)
    model.train(was_training)
    return total / len(images)


def train(manifest, model_config: ModelConfig = ModelConfig(), train_config: TrainConfig = TrainConfig(),
          out_dir=None, resume: Checkpoint | None = None, progress=None):
    """Train on the manifest's train split.

    Returns ``(checkpoint, history)``; ``history`` holds one
    ``{"epoch", "train_loss", "val_loss"}`` record per epoch.  With ``out_dir``
    a checkpoint is written every ``checkpoint_every`` epochs and at the end
    (``final.dlck``).  ``resume`` continues from a checkpoint written by a run
    with the same configs.
    """
    cfg = train_config
    torch.use_deterministic_algorithms(True)
    images, targets, labels = load_split(manifest, "train", cfg.target)
    if len(images) == 0:
        raise EmptyDataset("train split is empty")
    val_images, val_targets, _ = load_split(manifest, "val", cfg.target)
    if len(val_images) and val_images.shape[1:] != images.shape[1:]:
        raise ShapeError("val images differ in shape from train images")

    mcfg = model_config
    if cfg.width_scale is not None:
        mcfg = replace(mcfg, width_scale=cfg.width_scale)
    mcfg = replace(mcfg, seed=cfg.seed)
    model = HeatmapNet(mcfg)
    opt = _make_optimizer(model, cfg)
    history, start = [], 0
    if resume is not None:
        model.load_state_dict(resume.state, strict=False)
        _restore_optimizer(model, opt, resume.optimizer)
        history = list(resume.meta.get("history", []))
        start = int(resume.meta.get("epoch", 0))
    out = ensure_dir(out_dir) if out_dir is not None else None
    last_good = _snapshot(model, opt, cfg, start, history)

    model.train()
    for epoch in range(start, cfg.epochs):
        if cfg.augment:
            ep_images, ep_targets = _augment(images, labels, cfg, epoch)
        else:
            ep_images, ep_targets = images, targets
        perm = np.random.default_rng([cfg.seed, epoch]).permutation(len(images))
        losses = []
        for s in range(0, len(perm), cfg.batch_size):
            idx = perm[s:s + cfg.batch_size]
            x = torch.from_numpy(ep_images[idx])
            y = torch.from_numpy(ep_targets[idx])
            loss = composite_loss(model(x), y, cfg.loss_weights, cfg.awing)
            if not torch.isfinite(loss):
                if out is not None:
                    save_checkpoint(out / "last_good.dlck", last_good)
                raise DivergenceError(f"non-finite loss at epoch {epoch + 1}", last_good)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
        record = {"epoch": epoch + 1, "train_loss": float(np.mean(losses)),
                  "val_loss": validation_loss(model, val_images, val_targets, cfg)}
        history.append(record)
        last_good = _snapshot(model, opt, cfg, epoch + 1, history)
        if progress is not None:
            progress(record)
        log.info("epoch %d train %.5f val %s", record["epoch"], record["train_loss"], record["val_loss"])
        if out is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(out / f"epoch_{epoch + 1:04d}.dlck", last_good)

    ckpt = last_good
    if out is not None:
        save_checkpoint(out / "final.dlck", ckpt)
        with open(out / "history.json", "w", encoding="utf-8") as f:
            json.dump(history, f, indent=1)
            f.write("\n")
    return ckpt, history


def predict(model, image) -> np.ndarray:
    """Heatmap for one image (Image2D or 2D array) from a model, Checkpoint or checkpoint path."""
    if isinstance(model, (str, Path)):
        model = load_checkpoint(model)
    if isinstance(model, Checkpoint):
        model = model.model()
    px = image.pixels if isinstance(image, Image2D) else np.asarray(image)
    dtype = next(model.parameters()).dtype
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = model(torch.tensor(px, dtype=dtype)[None])
    finally:
        model.train(was_training)
    return out[0].numpy()


def finite_history(history) -> bool:
    return all(math.isfinite(h["train_loss"]) for h in history)
