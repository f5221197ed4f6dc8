"""Pixelwise heatmap losses (torch, differentiable).

All losses reduce by mean so that their weights do not depend on image size.
Inputs are tensors of identical shape; dice treats the last two axes as the
image and averages over any leading batch axes.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ShapeError, ValidationError


@dataclass(frozen=True)
class LossWeights:
    w_dice: float = 1.0
    w_awing: float = 1.0
    w_l2: float = 1.0
    w_l1: float = 0.0

    def __post_init__(self):
        ws = (self.w_dice, self.w_awing, self.w_l2, self.w_l1)
        if any(w < 0 for w in ws):
            raise ValidationError("loss weights must be non-negative")
        if not any(w > 0 for w in ws):
            raise ValidationError("at least one loss weight must be positive")


L1_ONLY = LossWeights(0.0, 0.0, 0.0, 1.0)


@dataclass(frozen=True)
class AWingParams:
    alpha: float = 2.1
    omega: float = 14.0
    epsilon: float = 1.0
    theta: float = 0.5

    def __post_init__(self):
        if not self.alpha > 1:
            raise ValidationError("alpha must exceed the maximum target value 1")
        if min(self.omega, self.epsilon, self.theta) <= 0:
            raise ValidationError("omega, epsilon and theta must be positive")


def _check(pred, target):
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {tuple(pred.shape)} != target shape {tuple(target.shape)}")


def dice_loss(pred, target, smooth: float = 1.0):
    _check(pred, target)
    dims = (-2, -1) if pred.dim() >= 2 else (-1,)
    inter = (pred * target).sum(dims)
    denom = (pred * pred).sum(dims) + (target * target).sum(dims)
    return (1 - (2 * inter + smooth) / (denom + smooth)).mean()


def awing_constants(target, params: AWingParams = AWingParams()):
    """Slope ``A`` and offset ``C`` that make the linear branch continuous at theta."""
    a, w, e, t = params.alpha, params.omega, params.epsilon, params.theta
    p = a - target
    r = torch.as_tensor(t / e, dtype=target.dtype)
    big_a = w * (1 / (1 + r ** p)) * p * r ** (p - 1) * (1 / e)
    big_c = t * big_a - w * torch.log1p(r ** p)
    return big_a, big_c


def adaptive_wing_map(pred, target, params: AWingParams = AWingParams()):
    _check(pred, target)
    diff = (target - pred).abs()
    big_a, big_c = awing_constants(target, params)
    small = diff < params.theta
    # clamp keeps the unused branch finite so gradients through torch.where stay clean
    d_small = torch.where(small, diff, torch.zeros_like(diff))
    log_branch = params.omega * torch.log1p((d_small / params.epsilon) ** (params.alpha - target))
    lin_branch = big_a * diff - big_c
    return torch.where(small, log_branch, lin_branch)


def adaptive_wing_loss(pred, target, params: AWingParams = AWingParams()):
    return adaptive_wing_map(pred, target, params).mean()


def pixel_mean_loss(pred, target, order: int = 2):
    _check(pred, target)
    if order == 2:
        return ((pred - target) ** 2).mean()
    if order == 1:
        return (pred - target).abs().mean()
    raise ValidationError(f"order must be 1 or 2, got {order!r}")


def loss_components(pred, target, weights: LossWeights = LossWeights(),
                    awing: AWingParams = AWingParams()) -> dict:
    """Named component values; components with zero weight are skipped."""
    out = {}
    if weights.w_dice:
        out["dice"] = dice_loss(pred, target)
    if weights.w_awing:
        out["awing"] = adaptive_wing_loss(pred, target, awing)
    if weights.w_l2:
        out["l2"] = pixel_mean_loss(pred, target, 2)
    if weights.w_l1:
        out["l1"] = pixel_mean_loss(pred, target, 1)
    return out


def composite_loss(pred, target, weights: LossWeights = LossWeights(),
                   awing: AWingParams = AWingParams()):
    if not isinstance(weights, LossWeights):
        weights = LossWeights(*weights)
    parts = loss_components(pred, target, weights, awing)
    scale = {"dice": weights.w_dice, "awing": weights.w_awing, "l2": weights.w_l2, "l1": weights.w_l1}
    return sum(scale[k] * v for k, v in parts.items())
