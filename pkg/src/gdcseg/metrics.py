"""Segmentation metrics: overall accuracy and mean intersection-over-union."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

IGNORE = -1


@dataclass
class EvalReport:
    per_category_iou: dict
    miou: float
    overall_acc: float
    meta: dict = field(default_factory=dict)


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_categories: int) -> np.ndarray:
    """(num_categories, num_categories) counts over non-ignored pixels; rows = gt."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    valid = gt != IGNORE
    idx = gt[valid].astype(np.int64) * num_categories + pred[valid].astype(np.int64)
    return np.bincount(idx, minlength=num_categories ** 2).reshape(num_categories, num_categories)


def miou(pred: np.ndarray, gt: np.ndarray, meta: dict | None = None) -> EvalReport:
    """IoU per category present in gt, averaged; pixels with gt == -1 are ignored."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    valid = gt != IGNORE
    if not valid.any():
        raise ValueError("ground truth is entirely ignored")
    n = int(max(pred[valid].max(initial=0), gt[valid].max(initial=0))) + 1
    cm = confusion_matrix(pred, gt, n)
    present = np.unique(gt[valid])
    ious = {}
    for c in present:
        tp = cm[c, c]
        union = cm[c, :].sum() + cm[:, c].sum() - tp
        ious[int(c)] = float(tp / union) if union > 0 else 0.0
    acc = float(np.trace(cm) / valid.sum())
    return EvalReport(per_category_iou=ious,
                      miou=float(np.mean(list(ious.values()))),
                      overall_acc=acc,
                      meta=meta or {})
