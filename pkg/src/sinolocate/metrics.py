"""Pixel metrics, instance matching, and localization errors.

Conventions: pixel metrics use the standard confusion-matrix definitions
with the empty-vs-empty case scored as perfect agreement. A sample counts
as correctly instance-segmented only when the predicted and true defect
counts match and a greedy max-IoU matching pairs everything at or above
the IoU floor. Relative localization error divides the Euclidean center
error by the detector width (the raw pixel error is reported alongside).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .core import (DefectEstimate, DefectRecord, ScanGeometry,
                   ValidationError, validate_mask)


def pixel_metrics(pred: np.ndarray, gt: np.ndarray) -> dict:
    """IoU, precision, recall, F1 between two binary masks."""
    pred = validate_mask(pred, "pred")
    gt = validate_mask(gt, "gt")
    if pred.shape != gt.shape:
        raise ValidationError(f"mask dims differ: {pred.shape} vs {gt.shape}")
    p = pred.astype(bool)
    t = gt.astype(bool)
    inter = int((p & t).sum())
    union = int((p | t).sum())
    n_pred = int(p.sum())
    n_gt = int(t.sum())
    if union == 0:
        return {"iou": 1.0, "precision": 1.0, "recall": 1.0, "f1": 1.0}
    iou = inter / union
    precision = inter / n_pred if n_pred else 0.0
    recall = inter / n_gt if n_gt else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall > 0 else 0.0)
    return {"iou": iou, "precision": precision, "recall": recall, "f1": f1}


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    a = a.astype(bool)
    b = b.astype(bool)
    union = int((a | b).sum())
    if union == 0:
        return 1.0
    return int((a & b).sum()) / union


def instance_correct_rate(pred_masks, gt_masks, iou_min: float = 0.5) -> dict:
    """Score one sample's instance segmentation.

    Correct iff the counts match and greedy max-IoU matching pairs every
    prediction with a distinct ground-truth mask at IoU >= iou_min.
    Returns {"correct", "rate", "matches"} with matches as
    (pred_idx, gt_idx, iou) tuples; rate is 1.0/0.0 so a harness can
    average it over samples.
    """
    pred_masks = [validate_mask(m, f"pred mask {i}") for i, m in enumerate(pred_masks)]
    gt_masks = [validate_mask(m, f"gt mask {i}") for i, m in enumerate(gt_masks)]
    pairs = []
    for i, pm in enumerate(pred_masks):
        for j, gm in enumerate(gt_masks):
            pairs.append((mask_iou(pm, gm), i, j))
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_p: set[int] = set()
    used_g: set[int] = set()
    matches = []
    for iou, i, j in pairs:
        if i in used_p or j in used_g or iou < iou_min:
            continue
        used_p.add(i)
        used_g.add(j)
        matches.append((i, j, iou))
    correct = (len(pred_masks) == len(gt_masks)
               and len(matches) == len(gt_masks))
    return {"correct": correct, "rate": 1.0 if correct else 0.0,
            "matches": matches}


def localization_errors(est: DefectEstimate, gt: DefectRecord,
                        g: ScanGeometry) -> dict:
    """Relative center/radius/area errors of one matched estimate.

    radius_rel is None for estimates that carry no radius (overlap box).
    """
    dx = est.center[0] - gt.center[0]
    dy = est.center[1] - gt.center[1]
    dist_px = math.hypot(dx, dy)
    out = {
        "dist_px": dist_px,
        "dist_rel": dist_px / g.detector_w,
        "area_rel": abs(est.area - gt.area) / gt.area,
        "radius_rel": (abs(est.radius - gt.radius) / gt.radius
                       if est.radius is not None else None),
    }
    return out


@dataclass
class Aggregate:
    """Macro-averaged report over a batch of samples."""

    n_samples: int = 0
    n_correct: int = 0
    n_matched: int = 0
    pixel_sums: dict = None
    loc_sums: dict = None
    n_radius: int = 0

    def __post_init__(self):
        self.pixel_sums = {"iou": 0.0, "precision": 0.0, "recall": 0.0, "f1": 0.0}
        self.loc_sums = {"dist_px": 0.0, "dist_rel": 0.0, "area_rel": 0.0,
                         "radius_rel": 0.0}

    def add_sample(self, pixel: dict | None, instance: dict,
                   loc_errors: list[dict]) -> None:
        self.n_samples += 1
        if pixel is not None:
            for k in self.pixel_sums:
                self.pixel_sums[k] += pixel[k]
        if instance["correct"]:
            self.n_correct += 1
        for err in loc_errors:
            self.n_matched += 1
            for k in ("dist_px", "dist_rel", "area_rel"):
                self.loc_sums[k] += err[k]
            if err["radius_rel"] is not None:
                self.loc_sums["radius_rel"] += err["radius_rel"]
                self.n_radius += 1

    def report(self) -> dict:
        n = max(self.n_samples, 1)
        m = max(self.n_matched, 1)
        rep = {
            "sinogram_segmentation": {
                k: self.pixel_sums[k] / n for k in self.pixel_sums},
            "instance_segmentation": {
                "correct_rate": self.n_correct / n,
                "distance_relative_error": self.loc_sums["dist_rel"] / m,
                "distance_error_px": self.loc_sums["dist_px"] / m,
                "area_relative_error": self.loc_sums["area_rel"] / m,
                "radius_relative_error": (
                    self.loc_sums["radius_rel"] / self.n_radius
                    if self.n_radius else None),
                "n_samples": self.n_samples,
                "n_matched": self.n_matched,
            },
        }
        return rep


def report_to_csv(report: dict, path) -> None:
    """Flatten the report into (section, metric, value) rows."""
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["section", "metric", "value"])
        for section, metrics in report.items():
            for k, v in metrics.items():
                wr.writerow([section, k, "" if v is None else v])
