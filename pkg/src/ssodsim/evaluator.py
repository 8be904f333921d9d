"""Detection metrics: per-class average precision and pseudo-label quality.

AP follows the COCO conventions at desk scale: per-class greedy matching
by descending score with single-use ground truths, and the area under the
precision-recall curve using all-points (continuous) interpolation.
Classes with no ground truth have undefined AP and are excluded from the
mean (logged).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geometry import boxes_to_array
from .losses import LossBreakdown

logger = logging.getLogger(__name__)

COCO_THRESHOLDS = tuple((50 + 5 * k) / 100 for k in range(10))


@dataclass
class MetricsRecord:
    """One evaluation row of a training run."""

    iteration: int
    tau_current: float
    map_50: float
    map_75: float
    map_coco: float
    per_class_ap: dict = field(default_factory=dict)
    pl_precision: float = 1.0
    pl_recall: float = 1.0
    pl_false_neg_rate: float = 0.0
    losses: LossBreakdown | None = None

    def __post_init__(self):
        for name in ("map_50", "map_75", "map_coco", "pl_precision",
                     "pl_recall", "pl_false_neg_rate"):
            v = getattr(self, name)
            if not (-1e-9 <= v <= 1 + 1e-9):
                raise ValueError(f"{name}={v} outside [0, 1]")


def _match_collection(pboxes, pscores, gboxes, iou_thresh):
    """Greedy matching inside one collection (one class, one image).

    Predictions are visited in descending score order; each matches the
    highest-IoU unused ground truth with IoU >= iou_thresh.  Returns
    (scores, tp flags) aligned to the visiting order.
    """
    order = np.argsort(-pscores, kind="stable")
    tp = np.zeros(order.size, dtype=bool)
    if order.size and len(gboxes):
        full = kernels.iou_matrix(pboxes[order], gboxes)
        used = np.zeros(len(gboxes), dtype=bool)
        for r in range(order.size):
            row = np.where(used, -1.0, full[r])
            j = int(np.argmax(row))
            if row[j] >= iou_thresh:
                tp[r] = True
                used[j] = True
    return pscores[order], tp


def _ap_from_matches(scores, tp, n_gt):
    """All-points interpolated AP from pooled match flags."""
    if n_gt == 0:
        return None
    if scores.size == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    tp = tp[order]
    tp_cum = np.cumsum(tp)
    precision = tp_cum / np.arange(1, tp.size + 1)
    recall = tp_cum / n_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    dr = np.diff(recall, prepend=0.0)
    return float(np.sum(dr * envelope))


def ap_per_class(collections, iou_thresh: float) -> dict:
    """Per-class AP pooled over collections.

    Each collection is a tuple of arrays
    ``(pred_boxes, pred_classes, pred_scores, gt_boxes, gt_classes)``;
    matching is greedy within a collection, the PR curve is global.
    """
    classes_with_gt = set()
    classes_seen = set()
    per_class = {}
    for _, pcls, _, _, gcls in collections:
        classes_with_gt.update(np.unique(gcls).tolist())
        classes_seen.update(np.unique(pcls).tolist())
    skipped = classes_seen - classes_with_gt
    if skipped:
        logger.debug("AP undefined for classes without ground truth: %s",
                     sorted(skipped))
    for c in sorted(classes_with_gt):
        scores_parts, tp_parts, n_gt = [], [], 0
        for pboxes, pcls, pscores, gboxes, gcls in collections:
            pm = pcls == c
            gm = gcls == c
            n_gt += int(gm.sum())
            s, tp = _match_collection(pboxes[pm], pscores[pm], gboxes[gm],
                                      iou_thresh)
            scores_parts.append(s)
            tp_parts.append(tp)
        ap = _ap_from_matches(np.concatenate(scores_parts),
                              np.concatenate(tp_parts), n_gt)
        per_class[int(c)] = ap
    return per_class


def mean_ap(per_class: dict) -> float:
    if not per_class:
        logger.debug("mAP over empty class set, reporting 0")
        return 0.0
    return float(np.mean(list(per_class.values())))


def _as_pred_arrays(preds):
    if not preds:
        return np.empty((0, 4)), np.empty(0, dtype=np.int64), np.empty(0)
    boxes = boxes_to_array([b for b, _, _ in preds])
    cls = np.array([c for _, c, _ in preds], dtype=np.int64)
    scores = np.array([s for _, _, s in preds], dtype=np.float64)
    return boxes, cls, scores


def _as_gt_arrays(gts):
    if not gts:
        return np.empty((0, 4)), np.empty(0, dtype=np.int64)
    boxes = boxes_to_array([b for b, _ in gts])
    cls = np.array([c for _, c in gts], dtype=np.int64)
    return boxes, cls


def average_precision(preds, gts, iou_thresh: float) -> dict:
    """Per-class AP of one prediction/ground-truth collection.

    ``preds`` are (BBox, class, score) triples, ``gts`` (BBox, class)
    pairs.  Returns {class: AP} over classes that have ground truth.
    """
    pboxes, pcls, pscores = _as_pred_arrays(preds)
    gboxes, gcls = _as_gt_arrays(gts)
    return ap_per_class([(pboxes, pcls, pscores, gboxes, gcls)], iou_thresh)


def map_summary(collections) -> tuple[float, float, float, dict]:
    """(mAP@50, mAP@75, mAP@[.5:.95], per-class AP@50) over collections."""
    per_class_50 = ap_per_class(collections, 0.5)
    map_50 = mean_ap(per_class_50)
    map_75 = mean_ap(ap_per_class(collections, 0.75))
    slices = [map_50]
    for t in COCO_THRESHOLDS[1:]:
        slices.append(mean_ap(ap_per_class(collections, t)))
    return map_50, map_75, float(np.mean(slices)), per_class_50


def match_counts(pboxes, pcls, gboxes, gcls, iou_thresh: float = 0.5) -> int:
    """True-positive count: same-class, IoU >= thresh, single-use GT."""
    tp = 0
    if len(pboxes) == 0 or len(gboxes) == 0:
        return 0
    used = np.zeros(len(gboxes), dtype=bool)
    full = kernels.iou_matrix(pboxes, gboxes)
    for i in range(len(pboxes)):
        row = np.where(used | (gcls != pcls[i]), -1.0, full[i])
        j = int(np.argmax(row))
        if row[j] >= iou_thresh:
            tp += 1
            used[j] = True
    return tp


def quality_from_counts(tp: int, n_pseudo: int, n_gt: int):
    """(precision, recall, false-negative rate) with vacuous-case fallbacks.

    Empty pseudo sets report precision 1.0; empty ground truth reports
    recall 1.0 (both logged, per the documented vacuous conventions).
    """
    if n_pseudo == 0:
        logger.debug("pseudo-label precision vacuous (no pseudo boxes)")
        precision = 1.0
    else:
        precision = tp / n_pseudo
    if n_gt == 0:
        logger.debug("pseudo-label recall vacuous (no ground truth)")
        recall = 1.0
    else:
        recall = tp / n_gt
    return precision, recall, 1.0 - recall


def pseudo_label_quality(pseudo, gts):
    """Precision/recall/false-negative rate of one pseudo-label set.

    A pseudo box is a true positive iff it has IoU >= 0.5 with an unused
    same-class ground-truth box.  ``gts`` is a list of (BBox, class).
    """
    pboxes, pcls = pseudo.cls_arrays()
    gboxes, gcls = _as_gt_arrays(gts)
    tp = match_counts(pboxes, pcls, gboxes, gcls)
    return quality_from_counts(tp, len(pboxes), len(gboxes))
