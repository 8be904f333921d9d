"""Adaptive foreground-score threshold.

The threshold separating foreground pseudo boxes from background candidates
is recomputed each iteration from the ratio of mean foreground-candidate
score to mean background-candidate score, compressed by a small exponent,
floored to one decimal and clamped to [0.5, 0.9].

Population convention (see also the pipeline): ``fg_scores`` are the
foreground scores of candidates currently classified foreground (by the
previous threshold) and ``bg_scores`` are the background-class
probabilities of the remaining candidates.  Under this reading the ratio
falls below 1 early in training, which is what lets the threshold start
low.  The populations are pooled over classes; a per-class threshold is a
possible extension and is intentionally not implemented.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .detection import foreground_score, foreground_scores, CandidateBatch

# Guards the decimal floor against values like 0.8 stored as 0.7999...96.
_FLOOR_EPS = 1e-12


@dataclass
class ThresholdState:
    """Mutable threshold tracker owned by the training loop."""

    gamma: float = 0.05
    clamp_lo: float = 0.5
    clamp_hi: float = 0.9
    current: float = field(default=0.5)
    discrete: bool = True

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not (0 < self.clamp_lo <= self.clamp_hi <= 1):
            raise ValueError("need 0 < clamp_lo <= clamp_hi <= 1")
        if not (self.clamp_lo <= self.current <= self.clamp_hi):
            raise ValueError("current threshold outside clamp range")


def _floor_decimal(value: float) -> float:
    """Round down to one decimal place; 0.94 -> 0.9."""
    return math.floor(value * 10.0 + _FLOOR_EPS) / 10.0


def compute_threshold(state: ThresholdState, fg_scores, bg_scores) -> float:
    """Update and return the threshold from current score populations.

    Returns ``clamp(floor_0.1((mean(fg)/mean(bg))^gamma), lo, hi)``.  With
    ``state.discrete`` false the decimal floor is skipped (continuous
    variant).  Either population empty, or a zero background mean, keeps
    the previous value instead of resetting.
    """
    if len(fg_scores) == 0 or len(bg_scores) == 0:
        return state.current
    bg_mean = sum(bg_scores) / len(bg_scores)
    if bg_mean == 0:
        return state.current
    fg_mean = sum(fg_scores) / len(fg_scores)
    ratio = fg_mean / bg_mean
    value = ratio ** state.gamma
    if state.discrete:
        value = _floor_decimal(value)
    state.current = min(max(value, state.clamp_lo), state.clamp_hi)
    return state.current


def filter_candidates(cands, tau: float):
    """Partition candidates into (foreground, background) by score > tau."""
    if isinstance(cands, CandidateBatch):
        scores, _ = foreground_scores(cands)
        mask = scores > tau
        return cands.select(mask), cands.select(~mask)
    fg, bg = [], []
    for c in cands:
        score, _ = foreground_score(c)
        (fg if score > tau else bg).append(c)
    return fg, bg
