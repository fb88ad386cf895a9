"""Segmentation losses with deep supervision and an edge term."""
from __future__ import annotations

import torch
import torch.nn.functional as F

from .decoder import DecoderOutput

DICE_SMOOTH = 1.0
EDGE_WEIGHT = 1.0


def _as_nchw(t: torch.Tensor) -> torch.Tensor:
    if t.dim() == 2:
        return t[None, None]
    if t.dim() == 3:
        return t[:, None]
    return t


def soft_dice_loss(pred: torch.Tensor, gt: torch.Tensor, smooth: float = DICE_SMOOTH) -> torch.Tensor:
    dims = tuple(range(1, pred.dim()))
    inter = (pred * gt).sum(dims)
    denom = pred.sum(dims) + gt.sum(dims)
    return (1 - (2 * inter + smooth) / (denom + smooth)).mean()


def seg_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Mean of soft Dice loss (per sample, smoothed) and pixelwise binary cross-entropy."""
    pred, gt = _as_nchw(pred), _as_nchw(gt).to(pred.dtype)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {tuple(pred.shape)} and mask {tuple(gt.shape)} differ in size")
    bce = F.binary_cross_entropy(pred, gt)
    return 0.5 * (soft_dice_loss(pred, gt) + bce)


def edge_target(gt: torch.Tensor) -> torch.Tensor:
    """Morphological gradient (3x3 dilation minus erosion) of a binary mask."""
    gt = _as_nchw(gt).float()
    dil = F.max_pool2d(gt, 3, stride=1, padding=1)
    ero = -F.max_pool2d(-gt, 3, stride=1, padding=1)
    return dil - ero


def total_loss(out: DecoderOutput, gt: torch.Tensor, edge_weight: float = EDGE_WEIGHT) -> torch.Tensor:
    loss = seg_loss(out.main, gt)
    for comp in out.companions:
        loss = loss + seg_loss(comp, gt)
    if edge_weight and out.edge is not None:
        loss = loss + edge_weight * seg_loss(out.edge, edge_target(gt).to(out.edge.dtype))
    return loss
