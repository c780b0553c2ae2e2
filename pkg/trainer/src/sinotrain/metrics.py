"""Pixel metrics over binary masks, matching the evaluation-side definitions."""

import numpy as np


def pixel_metrics(pred: np.ndarray, gt: np.ndarray) -> dict:
    p = pred.astype(bool)
    t = gt.astype(bool)
    inter = int((p & t).sum())
    union = int((p | t).sum())
    n_pred = int(p.sum())
    n_gt = int(t.sum())
    if union == 0:
        return {"iou": 1.0, "precision": 1.0, "recall": 1.0, "f1": 1.0}
    precision = inter / n_pred if n_pred else 0.0
    recall = inter / n_gt if n_gt else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall > 0 else 0.0)
    return {"iou": inter / union, "precision": precision,
            "recall": recall, "f1": f1}
