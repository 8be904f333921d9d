import numpy as np
import pytest

from oracles import iou_ref
from ssodsim.geometry import (BBox, area, boxes_to_array, clip_box, iou,
                              iou_matrix, jitter, jitter_boxes, repair_boxes)


def random_boxes(rng, n, span=40.0):
    pts = rng.uniform(0, span, (n, 2, 2))
    lo = pts.min(axis=1)
    hi = pts.max(axis=1)
    return np.concatenate([lo, hi], axis=1)


def test_bbox_rejects_inverted_corners():
    with pytest.raises(ValueError):
        BBox(3.0, 0.0, 1.0, 2.0)
    b = BBox.from_unordered(3.0, 0.0, 1.0, 2.0)
    assert (b.x1, b.y1, b.x2, b.y2) == (1.0, 0.0, 3.0, 2.0)


def test_area_and_iou_worked_values():
    assert area(BBox(0, 0, 2, 3)) == 6.0
    a = BBox(0, 0, 1, 1)
    assert iou(a, a) == 1.0
    assert iou(a, BBox(2, 2, 3, 3)) == 0.0
    # half-offset unit squares: inter 0.25, union 1.75
    assert iou(a, BBox(0.5, 0.5, 1.5, 1.5)) == pytest.approx(1 / 7, abs=1e-15)
    # shared edge only
    assert iou(a, BBox(1, 0, 2, 1)) == 0.0


def test_iou_matches_reference_on_random_pairs():
    rng = np.random.default_rng(11)
    a = random_boxes(rng, 60)
    b = random_boxes(rng, 40)
    full = iou_matrix(a, b)
    for i in range(0, 60, 7):
        for j in range(0, 40, 5):
            assert full[i, j] == pytest.approx(iou_ref(a[i], b[j]), abs=1e-12)
            assert iou(BBox(*a[i]), BBox(*b[j])) == pytest.approx(
                iou_ref(a[i], b[j]), abs=1e-12)


def test_iou_matrix_degenerate_boxes():
    z = np.array([[1.0, 1.0, 1.0, 1.0]])  # zero area
    other = np.array([[0.0, 0.0, 2.0, 2.0]])
    assert iou_matrix(z, other)[0, 0] == 0.0
    assert iou_matrix(z, z)[0, 0] == 0.0


def test_clip_box():
    c = clip_box(BBox(-5, -1, 50, 20), (40.0, 40.0))
    assert (c.x1, c.y1, c.x2, c.y2) == (0.0, 0.0, 40.0, 20.0)
    inside = BBox(1, 2, 3, 4)
    assert clip_box(inside, (40.0, 40.0)) == inside


def test_repair_boxes_swaps_and_clips():
    rng = np.random.default_rng(3)
    raw = rng.uniform(-10, 50, (200, 4))
    out = repair_boxes(raw, canvas=(40.0, 40.0))
    assert np.all(out[:, 0] <= out[:, 2])
    assert np.all(out[:, 1] <= out[:, 3])
    assert out.min() >= 0.0 and out.max() <= 40.0
    valid = random_boxes(rng, 50)
    np.testing.assert_array_equal(repair_boxes(valid), valid)


def test_jitter_zero_fraction_is_identity_but_consumes_draws():
    rng1 = np.random.default_rng(5)
    rng2 = np.random.default_rng(5)
    b = BBox(4, 6, 10, 14)
    out = jitter(b, 0.0, rng1)
    assert out == b
    rng2.uniform(-0.0, 0.0, 4)
    # streams stay aligned: next draws agree
    assert rng1.uniform() == rng2.uniform()


def test_jitter_scales_with_box_size_and_respects_canvas():
    rng = np.random.default_rng(9)
    b = BBox(10, 10, 20, 18)
    for _ in range(200):
        j = jitter(b, 0.1, rng, canvas=(40.0, 40.0))
        assert abs(j.x1 - b.x1) <= 0.1 * b.width + 1e-12
        assert abs(j.y2 - b.y2) <= 0.1 * b.height + 1e-12
        assert 0 <= j.x1 <= j.x2 <= 40
        assert 0 <= j.y1 <= j.y2 <= 40


def test_jitter_boxes_matches_scalar_stream():
    """The vectorized form must consume the RNG exactly like a per-box loop."""
    rng_vec = np.random.default_rng(21)
    rng_seq = np.random.default_rng(21)
    boxes = random_boxes(np.random.default_rng(0), 8) + 1.0
    vec = jitter_boxes(boxes, 0.08, rng_vec, canvas=(45.0, 45.0))
    seq = np.stack([
        jitter(BBox(*row), 0.08, rng_seq, canvas=(45.0, 45.0)).as_array()
        for row in boxes])
    np.testing.assert_allclose(vec, seq, atol=1e-12)


def test_boxes_to_array_mixed_inputs():
    arr = boxes_to_array([BBox(0, 0, 1, 1), (2.0, 2.0, 3.0, 4.0)])
    assert arr.shape == (2, 4)
    assert arr.dtype == np.float64
    assert boxes_to_array([]).shape == (0, 4)
