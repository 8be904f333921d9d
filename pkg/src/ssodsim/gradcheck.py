"""Finite-difference verification of every analytic loss gradient.

Each check draws random instances, evaluates the analytic gradient, and
compares it against central finite differences (step 1e-5) at 100 points,
excluding draws that land within 1e-6 of a nondifferentiable kink (the
absolute values in the similarity, dissimilarity and regression terms).
The softmax-based terms have no kinks and are never excluded.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .detection import CandidateBatch, PseudoLabelSet, Source
from .losses import (cross_entropy, loss_bg_sim, loss_cls_bg, loss_cls_fg,
                     loss_fg_bg_dissim, loss_reg, score_to_logit_grads,
                     softmax)

STEP = 1e-5
TOLERANCE = 1e-5
KINK_EPS = 1e-6


@dataclass
class GradCheckResult:
    name: str
    points: int
    skipped: int
    max_rel_err: float
    tolerance: float
    passed: bool
    seconds: float


def fd_gradient(f, x: np.ndarray, step: float = STEP) -> np.ndarray:
    """Central finite differences of a scalar function over a flat array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    out = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        out[i] = (hi - lo) / (2.0 * step)
    return g


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    f = np.asarray(numeric, dtype=np.float64).reshape(-1)
    if a.size == 0:
        return 0.0
    scale = np.maximum(np.abs(a), np.abs(f))
    # components where both sides sit below FD noise agree absolutely;
    # a relative comparison there only measures roundoff
    live = scale > 1e-7
    if not np.any(live):
        return 0.0
    return float(np.max(np.abs(a[live] - f[live]) / scale[live]))


def _spread_boxes(rng, n: int) -> np.ndarray:
    """n boxes on a coarse grid, far enough apart that max-IoU assignment
    cannot flip within an FD step."""
    idx = rng.permutation(64)[:n]
    x = (idx % 8) * 10.0
    y = (idx // 8) * 10.0
    w = rng.uniform(4.0, 7.0, n)
    h = rng.uniform(4.0, 7.0, n)
    return np.column_stack([x, y, x + w, y + h])


def _batch_from_logits(logits: np.ndarray, boxes: np.ndarray) -> CandidateBatch:
    return CandidateBatch(boxes, softmax(logits), Source.STUDENT)


def _check_cross_entropy(rng, points):
    worst, skipped = 0.0, 0
    for _ in range(points):
        z = rng.normal(size=4)
        target = int(rng.integers(4))
        _, grad = cross_entropy(softmax(z), target)
        num = fd_gradient(lambda v: cross_entropy(softmax(v), target)[0], z)
        worst = max(worst, rel_err(grad, num))
    return worst, skipped


def _check_cls_fg(rng, points):
    worst, skipped = 0.0, 0
    for _ in range(points):
        n = int(rng.integers(2, 6))
        boxes = _spread_boxes(rng, n)
        # pseudo boxes overlap a prefix of the candidates; the rest fall
        # back to the background target
        m = int(rng.integers(1, n + 1))
        ref = boxes[:m] + rng.uniform(-0.5, 0.5, (m, 4))
        pseudo = PseudoLabelSet(
            cls_boxes=[(r, int(rng.integers(3))) for r in ref],
            reg_boxes=[], threshold_used=0.5)
        z = rng.normal(size=(n, 4))

        def f(v):
            return loss_cls_fg(_batch_from_logits(v, boxes), pseudo)[0]

        _, grads = loss_cls_fg(_batch_from_logits(z, boxes), pseudo)
        worst = max(worst, rel_err(grads, fd_gradient(f, z)))
    return worst, skipped


def _check_cls_bg(rng, points):
    worst, skipped = 0.0, 0
    for _ in range(points):
        n = int(rng.integers(2, 6))
        boxes = _spread_boxes(rng, n)
        r = rng.uniform(0.1, 1.0, n)
        z = rng.normal(size=(n, 4))

        def f(v):
            return loss_cls_bg(_batch_from_logits(v, boxes), r)[0]

        _, grads = loss_cls_bg(_batch_from_logits(z, boxes), r)
        worst = max(worst, rel_err(grads, fd_gradient(f, z)))
    return worst, skipped


def _draw_clear(rng, draw, margin, skipped):
    """Redraw until the sample clears every kink by ``margin``.

    A finite difference cannot measure a subgradient closer to a kink
    than its own step, so rejected draws are replaced (and counted) to
    keep the number of measured points fixed.
    """
    for _ in range(64):
        sample, clearance = draw(rng)
        if clearance >= margin:
            return sample, skipped
        skipped += 1
    raise RuntimeError("could not draw a kink-free sample")


def _check_bg_sim(rng, points):
    worst, skipped = 0.0, 0
    for _ in range(points):
        def draw(r):
            n = int(r.integers(1, 8))
            s = r.uniform(0.01, 1.0, n)
            t = r.uniform(0.01, 1.0, n)
            return (s, t), float(np.min(np.abs(s - t)))

        (s, t), skipped = _draw_clear(rng, draw, 10 * STEP, skipped)
        _, grad = loss_bg_sim(s, t, beta=1.0)
        num = fd_gradient(lambda v: loss_bg_sim(v, t, beta=1.0)[0], s)
        worst = max(worst, rel_err(grad, num))
    return worst, skipped


def _check_fg_bg_dissim(rng, points):
    worst, skipped = 0.0, 0
    for _ in range(points):
        def draw(r):
            nf, nb = int(r.integers(1, 6)), int(r.integers(1, 6))
            fg = r.uniform(0.0, 1.0, nf)
            bg = r.uniform(0.0, 1.0, nb)
            # perturbing one bg entry moves the mean by step/nb, so the
            # clearance is measured in mean-shift units
            return (fg, bg), float(np.min(np.abs(fg - bg.mean()))) * nb

        (fg, bg), skipped = _draw_clear(rng, draw, 10 * STEP, skipped)
        _, gfg, gbg = loss_fg_bg_dissim(fg, bg)
        num_fg = fd_gradient(lambda v: loss_fg_bg_dissim(v, bg)[0], fg)
        num_bg = fd_gradient(lambda v: loss_fg_bg_dissim(fg, v)[0], bg)
        worst = max(worst, rel_err(gfg, num_fg), rel_err(gbg, num_bg))
    return worst, skipped


def _check_reg(rng, points):
    worst, skipped = 0.0, 0
    for _ in range(points):
        def draw(r):
            n = int(r.integers(1, 6))
            targets = _spread_boxes(r, n)
            boxes = targets + r.uniform(-1.0, 1.0, (n, 4))
            return (boxes, targets), float(np.min(np.abs(boxes - targets)))

        (boxes, targets), skipped = _draw_clear(rng, draw, 10 * STEP, skipped)
        pseudo = PseudoLabelSet(cls_boxes=[], reg_boxes=list(targets),
                                threshold_used=0.5)
        _, grads = loss_reg(boxes, pseudo)
        num = fd_gradient(lambda v: loss_reg(v, pseudo)[0], boxes.copy())
        worst = max(worst, rel_err(grads, num))
    return worst, skipped


def _check_score_chain(rng, points):
    """Chain rule from per-candidate max-class scores back to logits."""
    worst, skipped = 0.0, 0
    for _ in range(points):
        n = int(rng.integers(1, 6))
        z = rng.normal(size=(n, 4))
        idx = rng.integers(0, 4, n)
        coeff = rng.normal(size=n)

        def f(v):
            p = softmax(v)
            return float(np.sum(coeff * p[np.arange(n), idx]))

        grads = score_to_logit_grads(softmax(z), idx, coeff)
        worst = max(worst, rel_err(grads, fd_gradient(f, z)))
    return worst, skipped


_CHECKS = (
    ("cross_entropy", _check_cross_entropy),
    ("loss_cls_fg", _check_cls_fg),
    ("loss_cls_bg", _check_cls_bg),
    ("loss_bg_sim", _check_bg_sim),
    ("loss_fg_bg_dissim", _check_fg_bg_dissim),
    ("loss_reg", _check_reg),
    ("score_to_logit_grads", _check_score_chain),
)


def run_all(seed: int = 0, points: int = 100,
            tolerance: float = TOLERANCE) -> list[GradCheckResult]:
    results = []
    for name, fn in _CHECKS:
        rng = np.random.default_rng(np.random.SeedSequence((seed, hash(name) & 0xFFFF)))
        t0 = time.perf_counter()
        worst, skipped = fn(rng, points)
        results.append(GradCheckResult(
            name=name, points=points, skipped=skipped,
            max_rel_err=float(worst), tolerance=tolerance,
            passed=bool(worst < tolerance),
            seconds=time.perf_counter() - t0))
    return results


def report(results) -> str:
    lines = [f"{'loss':22s} {'points':>6s} {'skipped':>7s} "
             f"{'max rel err':>12s} {'status':>7s}"]
    for r in results:
        lines.append(f"{r.name:22s} {r.points:6d} {r.skipped:7d} "
                     f"{r.max_rel_err:12.3e} "
                     f"{'pass' if r.passed else 'FAIL':>7s}")
    return "\n".join(lines)
