"""Quantitative evaluation of a segmentation against ground truth.

Two scores: event-wise intersection-over-union of greedily matched
clusters, and a bounding-box detection rate for the foreground objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .events import EventWindow

OUTLIER = -1
BOX_IOU_THRESHOLD = 0.5


class LengthMismatch(Exception):
    """Prediction and ground truth label different event counts."""


@dataclass
class EvalReport:
    per_object_iou: dict = field(default_factory=dict)   # gt label -> IoU
    mean_iou: float = 0.0
    detections: dict = field(default_factory=dict)       # gt object -> bool
    detection_rate: float = 0.0
    assignment: dict = field(default_factory=dict)       # gt label -> pred label


def _labels_of(obj) -> np.ndarray:
    return np.asarray(getattr(obj, "labels", obj), dtype=int)


def event_iou(pred, gt) -> EvalReport:
    """Greedy max-overlap matching of predicted clusters to ground-truth
    labels; per-object IoU over event index sets, unmatched labels score 0."""
    pred_labels = _labels_of(pred)
    gt_labels = _labels_of(gt)
    if len(pred_labels) != len(gt_labels):
        raise LengthMismatch(
            f"{len(pred_labels)} predicted vs {len(gt_labels)} true labels")
    pred_ids = [int(l) for l in np.unique(pred_labels) if l != OUTLIER]
    gt_ids = [int(l) for l in np.unique(gt_labels)]
    overlaps = []
    for pl in pred_ids:
        pmask = pred_labels == pl
        for gl in gt_ids:
            inter = int(np.sum(pmask & (gt_labels == gl)))
            if inter > 0:
                overlaps.append((inter, pl, gl))
    overlaps.sort(key=lambda t: (-t[0], t[1], t[2]))
    report = EvalReport()
    used_pred: set[int] = set()
    for inter, pl, gl in overlaps:
        if pl in used_pred or gl in report.assignment:
            continue
        used_pred.add(pl)
        report.assignment[gl] = pl
        union = int(np.sum((pred_labels == pl) | (gt_labels == gl)))
        report.per_object_iou[gl] = inter / union
    for gl in gt_ids:
        report.per_object_iou.setdefault(gl, 0.0)
    report.mean_iou = float(np.mean([report.per_object_iou[gl]
                                     for gl in gt_ids]))
    return report


def _bounding_box(xs: np.ndarray, ys: np.ndarray):
    return float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max())


def box_iou(a, b) -> float:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union if union > 0 else 0.0


def detection_rate(pred, gt, window: EventWindow,
                   threshold: float = BOX_IOU_THRESHOLD) -> EvalReport:
    """Box-overlap detection of ground-truth objects.

    The largest predicted cluster plays the background role and is
    excluded; every other predicted cluster casts a bounding box over its
    events' raw positions, and a ground-truth object counts as detected
    when some box overlaps its own with IoU >= threshold.
    """
    pred_labels = _labels_of(pred)
    gt_labels = _labels_of(gt)
    if len(pred_labels) != len(gt_labels):
        raise LengthMismatch(
            f"{len(pred_labels)} predicted vs {len(gt_labels)} true labels")
    if len(pred_labels) != len(window):
        raise LengthMismatch("labels do not match the event window")
    report = EvalReport()
    pred_ids = [int(l) for l in np.unique(pred_labels) if l != OUTLIER]
    sizes = {pl: int(np.sum(pred_labels == pl)) for pl in pred_ids}
    candidates = sorted(pred_ids, key=lambda pl: -sizes[pl])[1:]
    boxes = []
    for pl in candidates:
        mask = pred_labels == pl
        boxes.append(_bounding_box(window.xs[mask], window.ys[mask]))
    gt_objects = [int(l) for l in np.unique(gt_labels) if l > 0]
    for gl in gt_objects:
        mask = gt_labels == gl
        gt_box = _bounding_box(window.xs[mask], window.ys[mask])
        report.detections[gl] = any(box_iou(b, gt_box) >= threshold
                                    for b in boxes)
    if gt_objects:
        report.detection_rate = float(np.mean(
            [report.detections[gl] for gl in gt_objects]))
    else:
        report.detection_rate = 1.0
    return report


def evaluate(pred, gt, window: EventWindow,
             threshold: float = BOX_IOU_THRESHOLD) -> EvalReport:
    """Combined IoU and detection report."""
    report = event_iou(pred, gt)
    det = detection_rate(pred, gt, window, threshold)
    report.detections = det.detections
    report.detection_rate = det.detection_rate
    return report


def format_report(r: EvalReport) -> str:
    """Human-readable key=value lines."""
    lines = [f"mean_iou={r.mean_iou:.6f}",
             f"detection_rate={r.detection_rate:.6f}"]
    for gl in sorted(r.per_object_iou):
        lines.append(f"iou_{gl}={r.per_object_iou[gl]:.6f}")
    for gl in sorted(r.detections):
        lines.append(f"detected_{gl}={int(r.detections[gl])}")
    return "\n".join(lines) + "\n"


def format_report_csv(r: EvalReport) -> str:
    """One metric,object,value triple per line."""
    lines = [f"mean_iou,all,{r.mean_iou:.6f}",
             f"detection_rate,all,{r.detection_rate:.6f}"]
    for gl in sorted(r.per_object_iou):
        lines.append(f"iou,{gl},{r.per_object_iou[gl]:.6f}")
    for gl in sorted(r.detections):
        lines.append(f"detected,{gl},{int(r.detections[gl])}")
    return "\n".join(lines) + "\n"
