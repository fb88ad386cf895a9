"""Per-image segmentation metrics and dataset summaries.

Conventions for degenerate masks:

* empty ground truth and empty prediction score IoU = DSC = 1;
* FNE is undefined (``None``) when the ground truth has no positives and is
  left out of dataset means, with the number of skipped images reported;
* FPE is 0 when the ground truth has no negative pixels.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

THRESHOLD = 0.5


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class EvalRecord:
    image_id: str
    counts: ConfusionCounts
    iou: float
    dsc: float
    fpe: float
    fne: float | None

    @property
    def blank_gt_with_prediction(self) -> bool:
        return self.counts.tp + self.counts.fn == 0 and self.counts.fp > 0


@dataclass
class EvalSummary:
    records: list[EvalRecord]
    iou: float
    dsc: float
    fpe: float
    fne: float | None
    fne_skipped: int
    blank_mask_audit: list[str] = field(default_factory=list)


def binarise(pred: np.ndarray, threshold: float = THRESHOLD) -> np.ndarray:
    pred = np.asarray(pred)
    if pred.dtype == bool:
        return pred
    if np.issubdtype(pred.dtype, np.floating):
        return pred >= threshold
    return pred > 0


def confusion(gt: np.ndarray, pred: np.ndarray) -> ConfusionCounts:
    gt, pred = np.asarray(gt).astype(bool), np.asarray(pred).astype(bool)
    if gt.shape != pred.shape:
        raise ValueError(f"mask sizes differ: {gt.shape} vs {pred.shape}")
    tp = int(np.count_nonzero(gt & pred))
    fp = int(np.count_nonzero(~gt & pred))
    fn = int(np.count_nonzero(gt & ~pred))
    tn = gt.size - tp - fp - fn
    return ConfusionCounts(tp, fp, fn, tn)


def metrics(c: ConfusionCounts) -> dict[str, float | None]:
    if c.tp + c.fp + c.fn == 0:
        iou = dsc = 1.0
    else:
        iou = c.tp / (c.tp + c.fp + c.fn)
        dsc = 2 * c.tp / (2 * c.tp + c.fp + c.fn)
    fpe = c.fp / (c.fp + c.tn) if c.fp + c.tn else 0.0
    fne = c.fn / (c.fn + c.tp) if c.fn + c.tp else None
    return {"iou": iou, "dsc": dsc, "fpe": fpe, "fne": fne}


def evaluate_pair(gt, pred, image_id: str = "") -> EvalRecord:
    c = confusion(gt, pred)
    return EvalRecord(image_id, c, **metrics(c))


def evaluate_set(pairs: Iterable, ids: Iterable[str] | None = None) -> EvalSummary:
    """Per-image records plus per-image-averaged means over ``(gt, pred)`` pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("evaluate_set needs at least one (gt, pred) pair")
    ids = list(ids) if ids is not None else [str(i) for i in range(len(pairs))]
    records = [evaluate_pair(gt, pred, i) for (gt, pred), i in zip(pairs, ids)]
    fnes = [r.fne for r in records if r.fne is not None]
    return EvalSummary(
        records=records,
        iou=float(np.mean([r.iou for r in records])),
        dsc=float(np.mean([r.dsc for r in records])),
        fpe=float(np.mean([r.fpe for r in records])),
        fne=float(np.mean(fnes)) if fnes else None,
        fne_skipped=len(records) - len(fnes),
        blank_mask_audit=[r.image_id for r in records if r.blank_gt_with_prediction],
    )


CSV_FIELDS = ["image_id", "tp", "fp", "fn", "tn", "iou", "dsc", "fpe", "fne"]


def _fmt(v) -> str:
    return "" if v is None else f"{v:.6f}"


def write_summary_csv(summary: EvalSummary, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS + ["blank_gt_flag"])
        for r in summary.records:
            c = r.counts
            w.writerow([r.image_id, c.tp, c.fp, c.fn, c.tn, _fmt(r.iou), _fmt(r.dsc), _fmt(r.fpe), _fmt(r.fne),
                        int(r.blank_gt_with_prediction)])
        w.writerow(["mean", "", "", "", "", _fmt(summary.iou), _fmt(summary.dsc), _fmt(summary.fpe),
                    _fmt(summary.fne), ""])
        w.writerow(["fne_skipped", summary.fne_skipped, "", "", "", "", "", "", "", ""])
        w.writerow(["blank_gt_with_prediction", len(summary.blank_mask_audit), "", "", "", "", "", "", "",
                    ";".join(summary.blank_mask_audit)])
