"""Loss terms of the pseudo-label training objective, with analytic gradients.

Gradients are taken with respect to detector *outputs* (logits, scores or
box coordinates); chaining into detector parameters is the training loop's
job.  Teacher-side quantities (pseudo boxes, reliabilities, similarity
targets) are constants under differentiation.  Subgradients at the kinks
of the absolute values are taken as 0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .detection import CandidateBatch, ClassScores
from .geometry import boxes_to_array

logger = logging.getLogger(__name__)

_CE_CLAMP = 1e-12


@dataclass
class LossConfig:
    """Weights of the composed objective: lambda is nowhere stated by the
    underlying method and defaults to 2.0; beta likewise defaults to 1.0."""

    lambda_: float = 2.0
    beta: float = 1.0

    def __post_init__(self):
        if self.lambda_ < 0 or self.beta < 0:
            raise ValueError("lambda and beta must be non-negative")


@dataclass(frozen=True)
class LossBreakdown:
    """Composed loss with its per-term decomposition.

    ``total = sup + lambda * (pl_weak + pl_strong)`` holds by construction
    in :func:`compose_total`.
    """

    total: float
    sup: float
    pl_weak: float
    pl_strong: float
    cls_fg: float = 0.0
    cls_bg: float = 0.0
    bg_sim: float = 0.0
    fg_bg_dissim: float = 0.0
    reg: float = 0.0

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if not np.isfinite(v):
                raise ValueError(f"non-finite loss component {name}={v}")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def _probs_of(scores) -> np.ndarray:
    if isinstance(scores, ClassScores):
        return scores.probs
    return np.asarray(scores, dtype=np.float64)


def cross_entropy(scores, target_class: int):
    """Negative log-likelihood of the target class.

    Returns ``(loss, grad)`` where the gradient is with respect to the
    logits that produced the probabilities (softmax - onehot).  A zero
    target probability is clamped to 1e-12 for the value (logged); the
    gradient keeps the softmax - onehot form.
    """
    probs = _probs_of(scores)
    p = float(probs[target_class])
    if p < _CE_CLAMP:
        logger.warning("cross_entropy: clamping zero probability to %g", _CE_CLAMP)
        p = _CE_CLAMP
    grad = probs.copy()
    grad[target_class] -= 1.0
    return -np.log(p), grad


def assign_targets(boxes: np.ndarray, ref_boxes: np.ndarray,
                   iou_floor: float = 0.5) -> np.ndarray:
    """Index of the max-IoU reference per box, -1 where IoU < iou_floor."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    best_iou, best_idx = kernels.max_iou_assign(boxes, ref_boxes)
    return np.where(best_iou >= iou_floor, best_idx, -1)


def _batch_of(cands) -> CandidateBatch | None:
    if isinstance(cands, CandidateBatch):
        return cands if len(cands) else None
    if len(cands) == 0:
        return None
    return CandidateBatch.from_list(list(cands))


def loss_cls_fg(fg_cands, pseudo):
    """Mean cross-entropy of candidates against assigned pseudo classes.

    Each candidate is assigned the class of its max-IoU pseudo box when
    that IoU is >= 0.5, otherwise the background class.  Returns
    ``(loss, grads)`` with one logit-gradient row per candidate; empty
    input gives 0 with an empty gradient.
    """
    batch = _batch_of(fg_cands)
    if batch is None:
        return 0.0, np.empty((0, 0))
    n, width = batch.probs.shape
    background = width - 1
    ref_boxes, ref_classes = pseudo.cls_arrays()
    if len(ref_boxes):
        assigned = assign_targets(batch.boxes, ref_boxes)
        targets = np.where(assigned >= 0, ref_classes[assigned], background)
    else:
        targets = np.full(n, background)
    p = np.maximum(batch.probs[np.arange(n), targets], _CE_CLAMP)
    loss = float(np.mean(-np.log(p)))
    grads = batch.probs.copy()
    grads[np.arange(n), targets] -= 1.0
    grads /= n
    return loss, grads


def loss_cls_bg(bg_cands, reliabilities, pseudo=None):
    """Reliability-weighted cross-entropy toward the background class.

    Weights are the normalized reliabilities ``delta_j = r_j / sum(r)``;
    an all-zero reliability vector falls back to uniform weights (logged).
    ``pseudo`` is accepted for signature symmetry with the foreground term
    and does not enter the computation.
    """
    batch = _batch_of(bg_cands)
    if batch is None:
        return 0.0, np.empty((0, 0))
    n, width = batch.probs.shape
    r = np.asarray(reliabilities, dtype=np.float64)
    if r.shape != (n,):
        raise ValueError("reliabilities must match the candidate count")
    total = float(r.sum())
    if total == 0.0:
        logger.debug("loss_cls_bg: all-zero reliabilities, using uniform weights")
        delta = np.full(n, 1.0 / n)
    else:
        delta = r / total
    p = np.maximum(batch.probs[:, -1], _CE_CLAMP)
    loss = float(np.sum(delta * -np.log(p)))
    grads = batch.probs * delta[:, None]
    grads[:, -1] -= delta
    return loss, grads


def reliability_scores(bg_cands, teacher) -> np.ndarray:
    """Teacher's background probability for each candidate's observation.

    The teacher re-scores the stored feature vector of each candidate, so
    the result reflects the teacher's opinion of the same observed box.
    Candidates must carry features.
    """
    batch = _batch_of(bg_cands)
    if batch is None:
        return np.empty(0)
    if batch.features is None:
        raise ValueError("candidates carry no features to re-score")
    return teacher.score(batch.features)[:, -1]


def loss_bg_sim(s_bg, t_bg, beta: float = 1.0):
    """Background-score similarity pull toward the teacher.

    ``(beta/N) * sum(log(|e^|s| - e^|t|| + 1))`` with natural logs; the
    inner absolute values are literal (no-ops for scores in [0, 1]).
    Returns ``(loss, grad_s)``; the teacher side is a constant.
    """
    s = np.asarray(s_bg, dtype=np.float64)
    t = np.asarray(t_bg, dtype=np.float64)
    if s.shape != t.shape:
        raise ValueError("score vectors differ in length")
    n = s.size
    if n == 0:
        return 0.0, np.empty(0)
    es = np.exp(np.abs(s))
    u = es - np.exp(np.abs(t))
    loss = float(beta / n * np.sum(np.log(np.abs(u) + 1.0)))
    grad = beta / n * np.sign(u) * es * np.sign(s) / (np.abs(u) + 1.0)
    return loss, grad


def loss_fg_bg_dissim(s_fg, s_bg):
    """Separation pressure between foreground scores and the mean
    background score.

    ``(1/N_fg) * sum(1 - |s_fg_i - mean(s_bg)|)``; an empty background
    population contributes mean 0.  Returns ``(loss, grad_fg, grad_bg)``.
    """
    fg = np.asarray(s_fg, dtype=np.float64)
    bg = np.asarray(s_bg, dtype=np.float64)
    n = fg.size
    if n == 0:
        return 0.0, np.empty(0), np.zeros_like(bg)
    m = float(bg.mean()) if bg.size else 0.0
    d = fg - m
    sign = np.sign(d)
    loss = float(np.mean(1.0 - np.abs(d)))
    grad_fg = -sign / n
    if bg.size:
        grad_bg = np.full(bg.size, float(sign.sum()) / (n * bg.size))
    else:
        grad_bg = np.empty(0)
    return loss, grad_fg, grad_bg


def loss_reg(refined_fg, pseudo):
    """Mean absolute coordinate error against assigned regression targets.

    Boxes are assigned to their max-IoU target in ``pseudo.reg_boxes``
    (floor 0.5, as in :func:`loss_cls_fg`); unassigned boxes drop out.
    Returns ``(loss, grads)`` with one (4,) row per input box; rows of
    unassigned boxes are zero.
    """
    if isinstance(refined_fg, np.ndarray):
        boxes = refined_fg.reshape(-1, 4)
    else:
        boxes = boxes_to_array(refined_fg)
    n = boxes.shape[0]
    grads = np.zeros((n, 4))
    refs = pseudo.reg_array()
    if n == 0 or refs.shape[0] == 0:
        return 0.0, grads
    assigned = assign_targets(boxes, refs)
    live = assigned >= 0
    count = int(live.sum())
    if count == 0:
        return 0.0, grads
    resid = boxes[live] - refs[assigned[live]]
    loss = float(np.mean(np.abs(resid), axis=1).sum() / count)
    grads[live] = np.sign(resid) / (4.0 * count)
    return loss, grads


def score_to_logit_grads(probs: np.ndarray, score_idx: np.ndarray,
                         dloss_dscore: np.ndarray) -> np.ndarray:
    """Chain per-candidate score gradients back to logit gradients.

    For a score ``s = probs[i, k]`` produced by softmax,
    ``ds/dz_j = s * (1[j=k] - probs[i, j])``.
    """
    n = probs.shape[0]
    s = probs[np.arange(n), score_idx]
    coeff = dloss_dscore * s
    grads = -coeff[:, None] * probs
    grads[np.arange(n), score_idx] += coeff
    return grads


def compose_total(sup: float, pl_weak: float, pl_strong: float,
                  lambda_: float, **components) -> LossBreakdown:
    """Compose the total objective ``sup + lambda*(pl_weak + pl_strong)``.

    Extra keyword components (cls_fg, cls_bg, bg_sim, fg_bg_dissim, reg)
    are stored on the breakdown for logging.
    """
    total = sup + lambda_ * (pl_weak + pl_strong)
    return LossBreakdown(total=total, sup=sup, pl_weak=pl_weak,
                         pl_strong=pl_strong, **components)
