"""Axis-aligned box algebra on a continuous canvas.

Boxes are corner-format ``(x1, y1, x2, y2)`` with ``x1 <= x2`` and
``y1 <= y2``.  Array-based helpers operate on ``(n, 4)`` float64 arrays and
delegate pairwise work to the kernel backend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class BBox:
    """One axis-aligned box with validated corner ordering."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not math.isfinite(v):
                raise ValueError(f"non-finite coordinate in {self!r}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"inverted corners in {self!r}")

    @classmethod
    def from_unordered(cls, x1, y1, x2, y2):
        """Build a box, swapping corner pairs so the invariant holds."""
        if x1 > x2:
            x1, x2 = x2, x1
        if y1 > y2:
            y1, y2 = y2, y1
        return cls(float(x1), float(y1), float(x2), float(y2))

    @property
    def width(self):
        return self.x2 - self.x1

    @property
    def height(self):
        return self.y2 - self.y1

    def as_array(self):
        return np.array([self.x1, self.y1, self.x2, self.y2])


def area(box: BBox) -> float:
    """Box area; zero-width or zero-height boxes have area 0."""
    return box.width * box.height


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes, in [0, 1].

    Degenerate boxes (zero area or empty union) yield 0 rather than NaN.
    """
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = iw * ih if (iw > 0 and ih > 0) else 0.0
    union = (area(a) + area(b)) - inter
    if inter > 0 and union > 0:
        return inter / union
    return 0.0


def clip_box(box: BBox, canvas: tuple[float, float]) -> BBox:
    """Clip a box to the canvas rectangle [0, w] x [0, h]."""
    w, h = canvas
    return BBox(
        min(max(box.x1, 0.0), w),
        min(max(box.y1, 0.0), h),
        min(max(box.x2, 0.0), w),
        min(max(box.y2, 0.0), h),
    )


def jitter(box: BBox, fraction: float, rng, canvas=None) -> BBox:
    """Perturb each corner by a uniform offset scaled by the box size.

    Four offsets are drawn in (x1, y1, x2, y2) order from
    ``U(-fraction, fraction)``; x-offsets scale by the width and y-offsets
    by the height.  Inverted corners are repaired by swapping, then the box
    is clipped to ``canvas`` when one is given.  ``fraction = 0`` returns a
    box equal to the input (the four draws are still consumed).
    """
    off = rng.uniform(-fraction, fraction, 4)
    w, h = box.width, box.height
    out = BBox.from_unordered(
        box.x1 + off[0] * w,
        box.y1 + off[1] * h,
        box.x2 + off[2] * w,
        box.y2 + off[3] * h,
    )
    if canvas is not None:
        out = clip_box(out, canvas)
    return out


def boxes_to_array(boxes) -> np.ndarray:
    """Stack BBox instances (or 4-sequences) into an (n, 4) float64 array."""
    if len(boxes) == 0:
        return np.empty((0, 4))
    rows = [b.as_array() if isinstance(b, BBox) else np.asarray(b, dtype=np.float64)
            for b in boxes]
    return np.stack(rows).reshape(-1, 4)


def jitter_boxes(boxes: np.ndarray, fraction: float, rng,
                 canvas=None) -> np.ndarray:
    """Vectorized :func:`jitter` over an (n, 4) array.

    One ``(n, 4)`` uniform draw is consumed; per-row offset order matches
    the scalar helper.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    n = boxes.shape[0]
    off = rng.uniform(-fraction, fraction, (n, 4))
    w = boxes[:, 2] - boxes[:, 0]
    h = boxes[:, 3] - boxes[:, 1]
    out = boxes + off * np.stack([w, h, w, h], axis=1)
    return repair_boxes(out, canvas)


def repair_boxes(boxes: np.ndarray, canvas=None) -> np.ndarray:
    """Swap inverted corners and optionally clip to the canvas, vectorized."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    x1 = np.minimum(boxes[:, 0], boxes[:, 2])
    x2 = np.maximum(boxes[:, 0], boxes[:, 2])
    y1 = np.minimum(boxes[:, 1], boxes[:, 3])
    y2 = np.maximum(boxes[:, 1], boxes[:, 3])
    out = np.stack([x1, y1, x2, y2], axis=1)
    if canvas is not None:
        w, h = canvas
        np.clip(out[:, 0::2], 0.0, w, out=out[:, 0::2])
        np.clip(out[:, 1::2], 0.0, h, out=out[:, 1::2])
    return out


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of two (n, 4)/(m, 4) arrays via the kernel backend."""
    return kernels.iou_matrix(a, b)
