"""Detection candidates and the operations shared by teacher and student.

A candidate couples a box with a normalized class-score vector whose last
entry is the background class.  The hot path keeps candidates in a
:class:`CandidateBatch` (plain arrays); list-of-:class:`Candidate` inputs
are accepted everywhere and returned in kind.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geometry import BBox, boxes_to_array

_SCORE_TOL = 1e-9


class Source(enum.Enum):
    TEACHER = "teacher"
    STUDENT = "student"


@dataclass(frozen=True)
class ClassScores:
    """Normalized per-class probabilities; entry C is background."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", p)
        if p.ndim != 1 or p.size < 2:
            raise ValueError("scores need at least two classes")
        if np.any(p < -_SCORE_TOL) or np.any(p > 1 + _SCORE_TOL):
            raise ValueError("scores outside [0, 1]")
        if abs(float(p.sum()) - 1.0) > _SCORE_TOL:
            raise ValueError("scores do not sum to 1")

    @property
    def background(self) -> float:
        return float(self.probs[-1])


@dataclass(frozen=True)
class Candidate:
    """A scored box proposal, optionally carrying its observation features."""

    box: BBox
    scores: ClassScores
    source: Source
    features: np.ndarray | None = field(default=None, compare=False)


class CandidateBatch:
    """Array-of-structs candidate container used by the training loop.

    ``boxes`` may hold raw regression outputs, so unlike :class:`BBox` the
    corner ordering is not enforced here; the overlap kernels treat
    degenerate boxes as zero-IoU.
    """

    __slots__ = ("boxes", "probs", "features", "source")

    def __init__(self, boxes, probs, source, features=None):
        self.boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 2:
            # an empty 1-D array has no inferrable class width
            probs = (probs.reshape(0, 0) if probs.size == 0
                     else probs.reshape(len(self.boxes), -1))
        if probs.shape[0] != len(self.boxes):
            raise ValueError("probs rows do not match box count")
        self.probs = probs
        self.features = None if features is None else np.asarray(features, dtype=np.float64)
        self.source = source

    def __len__(self):
        return self.boxes.shape[0]

    def select(self, index) -> "CandidateBatch":
        feats = None if self.features is None else self.features[index]
        return CandidateBatch(self.boxes[index], self.probs[index], self.source, feats)

    def to_list(self) -> list[Candidate]:
        out = []
        for i in range(len(self)):
            box = BBox.from_unordered(*self.boxes[i])
            feats = None if self.features is None else self.features[i]
            out.append(Candidate(box, ClassScores(self.probs[i]), self.source, feats))
        return out

    @classmethod
    def from_list(cls, cands) -> "CandidateBatch":
        if len(cands) == 0:
            raise ValueError("cannot infer class count from an empty list")
        source = cands[0].source
        boxes = boxes_to_array([c.box for c in cands])
        probs = np.stack([c.scores.probs for c in cands])
        feats = None
        if all(c.features is not None for c in cands):
            feats = np.stack([np.asarray(c.features, dtype=np.float64) for c in cands])
        return cls(boxes, probs, source, feats)


def _coerce(cands):
    """Normalize list input to a batch; returns (batch, was_list)."""
    if isinstance(cands, CandidateBatch):
        return cands, False
    if len(cands) == 0:
        return None, True
    return CandidateBatch.from_list(list(cands)), True


def foreground_score(cand: Candidate) -> tuple[float, int]:
    """Max foreground probability and its class index for one candidate."""
    fg = cand.scores.probs[:-1]
    idx = int(np.argmax(fg))
    return float(fg[idx]), idx


def foreground_scores(batch: CandidateBatch) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized max foreground probability and argmax class per row."""
    fg = batch.probs[:, :-1]
    idx = np.argmax(fg, axis=1)
    return fg[np.arange(len(batch)), idx], idx


def nms(cands, iou_threshold: float):
    """Greedy non-maximum suppression by descending foreground score.

    Ties in score keep the earlier candidate (stable sort); a candidate is
    suppressed when its IoU with an already-kept candidate is >= the
    threshold.  Survivors come back in descending-score order, in the input
    container kind.
    """
    batch, was_list = _coerce(cands)
    if batch is None or len(batch) == 0:
        return [] if was_list else batch
    scores, _ = foreground_scores(batch)
    order = np.argsort(-scores, kind="stable")
    mask = kernels.nms_mask(batch.boxes[order], iou_threshold)
    out = batch.select(order[mask.astype(bool)])
    return out.to_list() if was_list else out


def sample_proposals(cands, k: int, rng):
    """Uniformly subsample min(k, n) candidates without replacement.

    When k covers the whole list the input comes back unchanged; otherwise
    the sampled subset preserves input order.
    """
    batch, was_list = _coerce(cands)
    if batch is None or len(batch) <= k:
        return cands
    pick = np.sort(rng.choice(len(batch), size=k, replace=False))
    out = batch.select(pick)
    return out.to_list() if was_list else out


@dataclass
class PseudoLabelSet:
    """Teacher output for one unlabeled view.

    ``cls_boxes`` holds (box, class) pairs for the classification stream;
    ``reg_boxes`` the regression-stream target boxes; ``threshold_used``
    records the filter value that produced the set.
    """

    cls_boxes: list[tuple[BBox, int]]
    reg_boxes: list[BBox]
    threshold_used: float

    def cls_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.cls_boxes:
            return np.empty((0, 4)), np.empty(0, dtype=np.int64)
        boxes = boxes_to_array([b for b, _ in self.cls_boxes])
        classes = np.array([c for _, c in self.cls_boxes], dtype=np.int64)
        return boxes, classes

    def reg_array(self) -> np.ndarray:
        return boxes_to_array(self.reg_boxes)
