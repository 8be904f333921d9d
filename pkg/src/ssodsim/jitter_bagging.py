"""Jitter-Bagging box refinement.

Each pseudo box is jittered ``n_jitter`` times, every jittered variant is
re-refined through the teacher's regression head, and one refinement is
selected: by maximum area (default) or by maximum teacher foreground
score (the alternative bagging metric, behind a flag).

The ``teacher`` argument everywhere is a detector bound to its observed
scene (:class:`ssodsim.synth_world.SceneView` or anything exposing
``refine_boxes``/``score_boxes``/``canvas``), since refining a box
requires observing it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BBox, jitter_boxes, repair_boxes


@dataclass(frozen=True)
class JitterConfig:
    n_jitter: int = 10
    fraction: float = 0.06
    metric: str = "area"  # or "score"

    def __post_init__(self):
        if self.n_jitter < 1:
            raise ValueError("n_jitter must be >= 1")
        if self.fraction < 0:
            raise ValueError("fraction must be non-negative")
        if self.metric not in ("area", "score"):
            raise ValueError(f"unknown bagging metric {self.metric!r}")


def refine_boxes_array(raw: np.ndarray, teacher, cfg: JitterConfig,
                       rng) -> np.ndarray:
    """Vectorized refinement of (m, 4) raw boxes; returns (m, 4).

    Jitter draws are consumed box-major (all of box 0's jitters first), so
    the result matches per-box sequential refinement on a shared stream.
    Refined boxes are corner-repaired and clipped to the teacher's canvas.
    """
    raw = np.asarray(raw, dtype=np.float64).reshape(-1, 4)
    m = raw.shape[0]
    if m == 0:
        return raw.copy()
    nj = cfg.n_jitter
    jit = jitter_boxes(np.repeat(raw, nj, axis=0), cfg.fraction, rng,
                       canvas=teacher.canvas)
    refined = repair_boxes(teacher.refine_boxes(jit), canvas=teacher.canvas)
    if cfg.metric == "area":
        crit = (refined[:, 2] - refined[:, 0]) * (refined[:, 3] - refined[:, 1])
    else:
        probs = teacher.score_boxes(refined)
        crit = np.max(probs[:, :-1], axis=1)
    pick = np.argmax(crit.reshape(m, nj), axis=1) + np.arange(m) * nj
    return refined[pick]


def refine_box(b: BBox, teacher, cfg: JitterConfig, rng) -> BBox:
    """Refine one pseudo box; ties in the bagging metric keep the first."""
    out = refine_boxes_array(b.as_array().reshape(1, 4), teacher, cfg, rng)
    return BBox(*out[0])


def refine_set(pseudo, teacher, cfg: JitterConfig, tau: float,
               rng) -> list[BBox]:
    """Refine every regression-stream candidate of a pseudo-label set.

    The refined boxes are re-scored by the teacher and only those with
    foreground score > tau survive as regression targets.
    """
    refined = refine_boxes_array(pseudo.reg_array(), teacher, cfg, rng)
    kept = threshold_refined(refined, teacher, tau)
    return [BBox(*row) for row in kept]


def threshold_refined(refined: np.ndarray, teacher, tau: float) -> np.ndarray:
    """Filter refined boxes by teacher foreground score > tau."""
    if refined.shape[0] == 0:
        return refined
    probs = teacher.score_boxes(refined)
    fg = np.max(probs[:, :-1], axis=1)
    return refined[fg > tau]
