"""Training objectives.

Relevancy: sigmoid cross entropy (action segmentation) or focal loss
(localization and retrieval). Displacement regression: L1, IoU, DIoU or
L1 + IoU, computed on positive cells only. Displacements are (start, end)
distances from the anchor frame, both >= 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .core import LOSS_KINDS, ConfigError


@dataclass
class LossBreakdown:
    cls_loss: torch.Tensor
    reg_loss: torch.Tensor
    total: torch.Tensor
    n_pos: int

    def as_floats(self):
        return float(self.cls_loss.detach()), float(self.reg_loss.detach()), float(self.total.detach())


def _apply_mask(x, mask):
    if mask is None:
        return x.reshape(-1)
    return x[mask.bool()]


def sigmoid_ce(logits, targets, mask=None):
    """Mean binary cross entropy over the cells selected by ``mask``."""
    ce = F.binary_cross_entropy_with_logits(logits, targets.to(logits.dtype), reduction="none")
    ce = _apply_mask(ce, mask)
    if ce.numel() == 0:
        return logits.sum() * 0.0
    return ce.mean()


def focal_terms(logits, targets, gamma=2.0, alpha=0.25):
    """Per-cell focal loss. ``alpha=None`` disables class weighting."""
    t = targets.to(logits.dtype)
    ce = F.binary_cross_entropy_with_logits(logits, t, reduction="none")
    p = torch.sigmoid(logits)
    p_t = p * t + (1 - p) * (1 - t)
    loss = ce if gamma == 0 else ce * (1 - p_t) ** gamma
    if alpha is not None:
        loss = (alpha * t + (1 - alpha) * (1 - t)) * loss
    return loss


def focal_loss(logits, targets, gamma=2.0, alpha=0.25, mask=None):
    """Focal loss summed over cells and divided by max(n_pos, 1)."""
    if gamma < 0:
        raise ConfigError("focal gamma must be >= 0")
    if alpha is not None and not 0.0 <= alpha <= 1.0:
        raise ConfigError("focal alpha must lie in [0, 1]")
    terms = _apply_mask(focal_terms(logits, targets, gamma, alpha), mask)
    t = _apply_mask(targets, mask)
    n_pos = int((t > 0.5).sum())
    return terms.sum() / max(n_pos, 1)


def l1_terms(pred, target):
    return (pred - target).abs().sum(-1)


def iou_terms(pred, target):
    inter = torch.minimum(pred[..., 0], target[..., 0]) + torch.minimum(pred[..., 1], target[..., 1])
    union = torch.maximum(pred[..., 0], target[..., 0]) + torch.maximum(pred[..., 1], target[..., 1])
    safe = torch.where(union > 0, union, torch.ones_like(union))
    return torch.where(union > 0, 1 - inter / safe, torch.zeros_like(union))


def diou_terms(pred, target):
    # intervals [-s, e] around the anchor: centre (e - s) / 2
    rho = ((pred[..., 1] - pred[..., 0]) - (target[..., 1] - target[..., 0])) / 2
    enclose = torch.maximum(pred[..., 0], target[..., 0]) + torch.maximum(pred[..., 1], target[..., 1])
    safe = torch.where(enclose > 0, enclose, torch.ones_like(enclose))
    penalty = torch.where(enclose > 0, rho ** 2 / safe ** 2, torch.zeros_like(enclose))
    return iou_terms(pred, target) + penalty


_REG_TERMS = {
    "l1": l1_terms,
    "iou": iou_terms,
    "diou": diou_terms,
    "l1+iou": lambda p, t: l1_terms(p, t) + iou_terms(p, t),
}


def _mean_rows(terms):
    if terms.numel() == 0:
        return terms.sum() * 0.0
    return terms.mean()


def l1_loss(pred, target):
    """|ds_hat - ds| + |de_hat - de|, averaged over rows."""
    return _mean_rows(l1_terms(pred, target))


def iou_loss(pred, target):
    return _mean_rows(iou_terms(pred, target))


def diou_loss(pred, target):
    return _mean_rows(diou_terms(pred, target))


def regression_loss(pred, target, kind):
    try:
        fn = _REG_TERMS[kind]
    except KeyError:
        raise ConfigError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}") from None
    return _mean_rows(fn(pred, target))


def combined_loss(logits, dt_pred, y, dt_target, valid, config) -> LossBreakdown:
    """Total loss over a batch of (video, text) pairs.

    ``logits``, ``y`` and ``valid`` are (P, cells); ``dt_pred`` and
    ``dt_target`` are (P, cells, 2). Classification is normalised per pair by
    max(n_pos, 1) and averaged over pairs; regression is averaged over all
    positive cells.
    """
    if config.loss_kind not in _REG_TERMS:
        raise ConfigError(f"unknown loss kind {config.loss_kind!r}")
    valid = valid.bool()
    pos = (y > 0.5) & valid
    n_pos = int(pos.sum())
    if config.task == "as":
        cls = sigmoid_ce(logits, y, valid)
    else:
        terms = focal_terms(logits, y, config.focal_gamma, config.focal_alpha) * valid
        per_pair = terms.sum(-1) / pos.sum(-1).clamp(min=1)
        cls = per_pair.mean()
    if config.task == "as" or n_pos == 0 or dt_pred is None:
        reg = logits.sum() * 0.0
    else:
        reg = regression_loss(dt_pred[pos], dt_target[pos], config.loss_kind)
    return LossBreakdown(cls, reg, cls + config.alpha * reg, n_pos)
