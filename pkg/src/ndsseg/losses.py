"""Focal and dice losses, the per-sequence total loss, and IOU/F1 scores.

Tensor variants (`*_t`) are differentiable and feed training; the Raster
wrappers mirror them for library use and evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ShapeError, ValidationError
from .raster import Raster

_EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    dice_smooth: float = 1.0
    eval_threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.focal_alpha <= 1.0:
            raise ValidationError("focal_alpha must be in (0, 1]")
        if self.focal_gamma < 0.0:
            raise ValidationError("focal_gamma must be >= 0")
        if self.dice_smooth <= 0.0:
            raise ValidationError("dice_smooth must be > 0")
        if not 0.0 < self.eval_threshold < 1.0:
            raise ValidationError("eval_threshold must be in (0, 1)")


def focal_loss_t(pred: torch.Tensor, target: torch.Tensor,
                 cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """Mean focal loss: -alpha * (1 - p_t)^gamma * log(p_t)."""
    if pred.shape != target.shape:
        raise ShapeError(f"pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    p = pred.clamp(_EPS, 1.0 - _EPS)
    p_t = torch.where(target > 0.5, p, 1.0 - p)
    return (-cfg.focal_alpha * (1.0 - p_t) ** cfg.focal_gamma * torch.log(p_t)).mean()


def dice_loss_t(pred: torch.Tensor, target: torch.Tensor,
                cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """Soft dice loss: 1 - (2*sum(p*y) + s) / (sum(p) + sum(y) + s)."""
    if pred.shape != target.shape:
        raise ShapeError(f"pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    s = cfg.dice_smooth
    intersection = (pred * target).sum()
    return 1.0 - (2.0 * intersection + s) / (pred.sum() + target.sum() + s)


def combined_loss_t(pred: torch.Tensor, target: torch.Tensor,
                    cfg: LossConfig = LossConfig()) -> torch.Tensor:
    return focal_loss_t(pred, target, cfg) + dice_loss_t(pred, target, cfg)


def sequence_loss_t(preds: list[torch.Tensor], target: torch.Tensor,
                    cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """Mean over timesteps of (focal + dice), each against the same target."""
    if len(preds) == 0:
        raise ValidationError("sequence loss needs at least one prediction")
    total = sum(combined_loss_t(p, target, cfg) for p in preds)
    return total / len(preds)


def _as_tensor(r: Raster) -> torch.Tensor:
    return torch.from_numpy(np.asarray(r.values[:, :, 0], dtype=np.float64))


def focal_loss(pred: Raster, target: Raster, cfg: LossConfig = LossConfig()) -> float:
    return float(focal_loss_t(_as_tensor(pred), _as_tensor(target), cfg))


def dice_loss(pred: Raster, target: Raster, cfg: LossConfig = LossConfig()) -> float:
    return float(dice_loss_t(_as_tensor(pred), _as_tensor(target), cfg))


def sequence_loss(preds: list[Raster], target: Raster,
                  cfg: LossConfig = LossConfig()) -> float:
    if not 1 <= len(preds) <= 3:
        raise ValidationError(f"expected 1-3 prediction masks, got {len(preds)}")
    return float(sequence_loss_t([_as_tensor(p) for p in preds], _as_tensor(target), cfg))


def segmentation_scores(pred: Raster, target: Raster,
                        cfg: LossConfig = LossConfig()) -> tuple[float, float]:
    """(IOU, F1) of the thresholded prediction; both 1.0 when P and G are empty."""
    if pred.values.shape[:2] != target.values.shape[:2]:
        raise ShapeError("pred and target dims differ")
    p = pred.values[:, :, 0] >= cfg.eval_threshold
    g = target.values[:, :, 0] > 0.5
    inter = np.logical_and(p, g).sum()
    p_n, g_n = p.sum(), g.sum()
    union = p_n + g_n - inter
    if p_n == 0 and g_n == 0:
        return 1.0, 1.0
    iou = inter / union if union > 0 else 0.0
    f1 = 2.0 * inter / (p_n + g_n)
    return float(iou), float(f1)
