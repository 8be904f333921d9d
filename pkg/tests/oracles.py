"""Independent reference implementations used to freeze expected values.

Everything here is written from the definitions, not from the library
code: scalar loops, explicit PR-point enumeration, plain-float
recursions.  Test modules compare library output against these.
"""

import math

import numpy as np


def iou_ref(a, b) -> float:
    """Scalar IoU of two (x1, y1, x2, y2) boxes from the definition."""
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def nms_keep_ref(boxes, scores, thresh) -> frozenset:
    """Exhaustive greedy NMS; returns the kept original indices.

    Repeatedly take the highest-scored live candidate (earliest index on
    ties), keep it, and kill every live candidate whose IoU with it is
    >= thresh.
    """
    n = len(scores)
    alive = [True] * n
    kept = []
    while True:
        best, best_score = -1, -math.inf
        for i in range(n):
            if alive[i] and scores[i] > best_score:
                best, best_score = i, scores[i]
        if best < 0:
            break
        kept.append(best)
        alive[best] = False
        for i in range(n):
            if alive[i] and iou_ref(boxes[best], boxes[i]) >= thresh:
                alive[i] = False
    return frozenset(kept)


def ap_ref(pred_boxes, pred_classes, pred_scores, gt_boxes, gt_classes,
           iou_thresh) -> dict:
    """PR-point enumeration of per-class AP for one collection.

    Predictions are walked in descending score order; each one greedily
    claims its best-overlapping unused ground truth of the same class
    (a hit needs IoU >= iou_thresh).  AP sums, over the hits, 1/n_gt
    times the best precision at that recall level or beyond.
    """
    out = {}
    for c in sorted({int(g) for g in gt_classes}):
        preds = sorted(
            (i for i in range(len(pred_scores)) if pred_classes[i] == c),
            key=lambda i: -pred_scores[i])
        gts = [j for j in range(len(gt_classes)) if gt_classes[j] == c]
        used = set()
        hits = []
        for i in preds:
            best_j, best_iou = -1, 0.0
            for j in gts:
                if j in used:
                    continue
                v = iou_ref(pred_boxes[i], gt_boxes[j])
                if v > best_iou:
                    best_j, best_iou = j, v
            if best_j >= 0 and best_iou >= iou_thresh:
                used.add(best_j)
                hits.append(True)
            else:
                hits.append(False)
        precisions = []
        tp = 0
        for k, hit in enumerate(hits, start=1):
            tp += hit
            precisions.append(tp / k)
        ap = 0.0
        for k, hit in enumerate(hits):
            if hit:
                ap += max(precisions[k:]) / len(gts)
        out[c] = ap
    return out


def threshold_ref(fg_scores, bg_scores, gamma, lo, hi, discrete, prev):
    """Eq. 5 threshold from the formula, scalar arithmetic only."""
    if len(fg_scores) == 0 or len(bg_scores) == 0:
        return prev
    bg_mean = sum(bg_scores) / len(bg_scores)
    if bg_mean == 0:
        return prev
    value = (sum(fg_scores) / len(fg_scores) / bg_mean) ** gamma
    if discrete:
        value = math.floor(value * 10.0 + 1e-12) / 10.0
    return min(max(value, lo), hi)


def ema_ref(prev, student, decay):
    return decay * prev + (1.0 - decay) * student


def dema_ref(e1, e2, student, decay):
    """One scalar double-EMA step: returns (teacher, e1', e2')."""
    e1 = decay * e1 + (1.0 - decay) * student
    e2 = decay * e2 + (1.0 - decay) * e1
    return 2.0 * e1 - e2, e1, e2


def jb_pick_ref(raw, view, n_jitter, fraction, metric, rng):
    """Per-box sequential jitter-bag refinement.

    For each raw box in order: draw n_jitter perturbed copies (consuming
    the stream exactly like the scalar jitter helper), refine each through
    the view, repair, then keep the copy maximizing the bagging metric
    (first maximum wins).  Returns an (m, 4) array.
    """
    from ssodsim.geometry import BBox, jitter, repair_boxes

    out = []
    for row in np.asarray(raw, dtype=np.float64).reshape(-1, 4):
        cands = [jitter(BBox(*row), fraction, rng, canvas=view.canvas)
                 for _ in range(n_jitter)]
        arr = np.stack([c.as_array() for c in cands])
        refined = repair_boxes(view.refine_boxes(arr), canvas=view.canvas)
        if metric == "area":
            crit = [(r[2] - r[0]) * (r[3] - r[1]) for r in refined]
        else:
            probs = view.score_boxes(refined)
            crit = [max(p[:-1]) for p in probs]
        best = max(range(n_jitter), key=lambda i: (crit[i], -i))
        out.append(refined[best])
    return np.stack(out) if out else np.empty((0, 4))
