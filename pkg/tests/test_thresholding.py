"""The adaptive cutoff: clamp(floor_0.1((mean fg / mean bg)^gamma)).

Worked values here were frozen from the scalar formula in oracles.py
before the module was written.
"""

import numpy as np
import pytest

from oracles import threshold_ref
from ssodsim.detection import CandidateBatch, Source
from ssodsim.thresholding import (ThresholdState, compute_threshold,
                                  filter_candidates)

ALLOWED = {0.5, 0.6, 0.7, 0.8, 0.9}


def fresh_state(**kw):
    return ThresholdState(**kw)


def test_worked_example_equal_means():
    # ratio 1 -> 1.0^0.05 = 1.0, floored to 1.0, clamped to 0.9
    st = fresh_state()
    assert compute_threshold(st, [0.4, 0.6], [0.4, 0.6]) == 0.9


def test_worked_example_weak_foreground():
    # 0.05/0.9 = 0.0556 -> ^0.05 = 0.8655 -> floor 0.8
    st = fresh_state()
    assert compute_threshold(st, [0.05], [0.9]) == 0.8


def test_worked_example_moderate_foreground():
    # 0.3/0.9 = 0.3333 -> ^0.05 = 0.9466 -> floor 0.9
    st = fresh_state()
    assert compute_threshold(st, [0.3], [0.9]) == 0.9


def test_output_always_in_discrete_grid():
    rng = np.random.default_rng(17)
    st = fresh_state()
    for _ in range(2000):
        fg = rng.uniform(0, 1, int(rng.integers(1, 30)))
        bg = rng.uniform(0, 1, int(rng.integers(1, 30)))
        tau = compute_threshold(st, fg, bg)
        assert tau in ALLOWED
        assert st.current == tau


def test_matches_scalar_reference():
    rng = np.random.default_rng(23)
    st = fresh_state()
    prev = st.current
    for _ in range(500):
        fg = rng.uniform(0, 1, int(rng.integers(0, 12)))
        bg = rng.uniform(0, 1, int(rng.integers(0, 12)))
        expected = threshold_ref(fg, bg, st.gamma, st.clamp_lo, st.clamp_hi,
                                 True, prev)
        assert compute_threshold(st, fg, bg) == pytest.approx(expected,
                                                              abs=1e-12)
        prev = st.current


def test_monotone_in_foreground_mean():
    rng = np.random.default_rng(29)
    for _ in range(500):
        bg = rng.uniform(0.05, 1, 10)
        lo_fg = rng.uniform(0, 0.5, 10)
        hi_fg = lo_fg + rng.uniform(0, 0.5)
        t_lo = compute_threshold(fresh_state(), lo_fg, bg)
        t_hi = compute_threshold(fresh_state(), hi_fg, bg)
        assert t_hi >= t_lo


def test_scale_covariance():
    # scaling both populations by c leaves the ratio (hence tau) unchanged
    fg = [0.2, 0.3]
    bg = [0.6, 0.8]
    base = compute_threshold(fresh_state(), fg, bg)
    for c in (0.5, 0.25, 1.2):
        scaled = compute_threshold(fresh_state(), [c * v for v in fg],
                                   [c * v for v in bg])
        assert scaled == base


def test_empty_population_keeps_previous():
    st = fresh_state()
    compute_threshold(st, [0.05], [0.9])
    assert st.current == 0.8
    assert compute_threshold(st, [], [0.5]) == 0.8
    assert compute_threshold(st, [0.5], []) == 0.8
    assert compute_threshold(st, [0.5], [0.0, 0.0]) == 0.8
    assert st.current == 0.8


def test_continuous_mode_skips_floor():
    st = fresh_state(discrete=False)
    tau = compute_threshold(st, [0.05], [0.9])
    assert tau == pytest.approx((0.05 / 0.9) ** 0.05, abs=1e-12)
    assert tau not in ALLOWED


def test_state_validation():
    with pytest.raises(ValueError):
        ThresholdState(gamma=0.0)
    with pytest.raises(ValueError):
        ThresholdState(clamp_lo=0.8, clamp_hi=0.6)
    with pytest.raises(ValueError):
        ThresholdState(current=0.3)


def test_filter_candidates_partitions():
    rng = np.random.default_rng(31)
    pts = rng.uniform(0, 30, (20, 2, 2))
    boxes = np.concatenate([pts.min(axis=1), pts.max(axis=1)], axis=1)
    logits = rng.normal(size=(20, 5))
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    batch = CandidateBatch(boxes, probs, Source.TEACHER)
    fg, bg = filter_candidates(batch, 0.4)
    assert len(fg) + len(bg) == 20
    fg_scores = np.max(fg.probs[:, :-1], axis=1) if len(fg) else np.empty(0)
    bg_scores = np.max(bg.probs[:, :-1], axis=1) if len(bg) else np.empty(0)
    assert np.all(fg_scores > 0.4)
    assert np.all(bg_scores <= 0.4)
    # list form partitions the same way
    fg_l, bg_l = filter_candidates(batch.to_list(), 0.4)
    assert len(fg_l) == len(fg) and len(bg_l) == len(bg)
