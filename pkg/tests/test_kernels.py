"""Backend contract: the compiled module and the numpy reference must
agree exactly on box decisions (IoU, suppression, assignment) and to
libm rounding on the hashed-noise paths."""

import numpy as np
import pytest

from ssodsim import kernels

IMPLS = kernels.available_backends()
needs_both = pytest.mark.skipif(len(IMPLS) < 2,
                                reason="compiled backend not built")


def random_boxes(rng, n):
    pts = rng.uniform(0, 40, (n, 2, 2))
    return np.concatenate([pts.min(axis=1), pts.max(axis=1)], axis=1)


def test_active_backend_reports():
    assert kernels.backend() in ("compiled", "python")
    assert "python" in IMPLS


@needs_both
@pytest.mark.parametrize("n,m", [(1, 1), (17, 5), (64, 64), (200, 3)])
def test_iou_matrix_backends_bitwise_equal(n, m):
    rng = np.random.default_rng(n * 100 + m)
    a, b = random_boxes(rng, n), random_boxes(rng, m)
    np.testing.assert_array_equal(IMPLS["python"].iou_matrix(a, b),
                                  IMPLS["compiled"].iou_matrix(a, b))


@needs_both
def test_nms_mask_backends_bitwise_equal():
    rng = np.random.default_rng(4)
    for _ in range(50):
        boxes = random_boxes(rng, int(rng.integers(1, 40)))
        for thresh in (0.3, 0.5, 0.7, 0.9):
            np.testing.assert_array_equal(
                IMPLS["python"].nms_mask(boxes, thresh),
                IMPLS["compiled"].nms_mask(boxes, thresh))


@needs_both
def test_max_iou_assign_backends_bitwise_equal():
    rng = np.random.default_rng(8)
    boxes = random_boxes(rng, 120)
    refs = random_boxes(rng, 9)
    pi, pj = IMPLS["python"].max_iou_assign(boxes, refs)
    ci, cj = IMPLS["compiled"].max_iou_assign(boxes, refs)
    np.testing.assert_array_equal(pi, ci)
    np.testing.assert_array_equal(pj, cj)


@needs_both
def test_box_noise_backends_match_to_rounding():
    rng = np.random.default_rng(15)
    boxes = random_boxes(rng, 300)
    a = IMPLS["python"].box_noise(boxes, 987654321, 16)
    b = IMPLS["compiled"].box_noise(boxes, 987654321, 16)
    # only sin/cos/log/sqrt rounding may differ between libm and numpy
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_box_noise_is_pure_and_seed_sensitive():
    boxes = random_boxes(np.random.default_rng(2), 50)
    a = kernels.box_noise(boxes, 7, 8)
    b = kernels.box_noise(boxes, 7, 8)
    np.testing.assert_array_equal(a, b)
    c = kernels.box_noise(boxes, 8, 8)
    assert np.abs(a - c).max() > 0.1
    # keyed by coordinates: moving one box changes only its row
    moved = boxes.copy()
    moved[3] += 0.25
    d = kernels.box_noise(moved, 7, 8)
    assert np.array_equal(d[:3], a[:3]) and np.array_equal(d[4:], a[4:])
    assert np.abs(d[3] - a[3]).max() > 0.1


def test_box_noise_moments():
    boxes = random_boxes(np.random.default_rng(100), 2000)
    z = kernels.box_noise(boxes, 31337, 16).ravel()
    n = z.size
    assert abs(z.mean()) < 4 / np.sqrt(n)
    assert abs(z.std() - 1.0) < 4 / np.sqrt(n)
    assert abs((z < 0).mean() - 0.5) < 4 * 0.5 / np.sqrt(n)


@needs_both
def test_scene_features_noise_free_path_bitwise_equal():
    rng = np.random.default_rng(44)
    boxes = random_boxes(rng, 80)
    obj = random_boxes(rng, 5)
    cls = rng.integers(0, 4, 5)
    protos = rng.normal(size=(4, 12))
    protos[:, -4:] = 0.0
    args = (boxes, obj, cls, protos, 10.0, 1.0, 0.0, 0, 0.0, 0, 0.0, 0)
    np.testing.assert_array_equal(IMPLS["python"].scene_features(*args),
                                  IMPLS["compiled"].scene_features(*args))


@needs_both
def test_scene_features_noisy_paths_match_to_rounding():
    rng = np.random.default_rng(45)
    boxes = random_boxes(rng, 80)
    obj = random_boxes(rng, 5)
    cls = rng.integers(0, 4, 5)
    protos = rng.normal(size=(4, 12))
    protos[:, -4:] = 0.0
    args = (boxes, obj, cls, protos, 10.0, 1.0, 0.4, 11, 0.3, 22, 0.05, 33)
    np.testing.assert_allclose(IMPLS["python"].scene_features(*args),
                               IMPLS["compiled"].scene_features(*args),
                               rtol=0, atol=1e-12)


def test_scene_features_empty_objects_is_pure_noise():
    boxes = random_boxes(np.random.default_rng(1), 10)
    protos = np.zeros((3, 10))
    out = kernels.scene_features(boxes, np.empty((0, 4)),
                                 np.empty(0, dtype=np.int64), protos,
                                 10.0, 1.0, 0.0, 0, 0.5, 9, 0.0, 0)
    expected = 0.5 * kernels.box_noise(boxes, 9, 10)
    np.testing.assert_allclose(out, expected, atol=1e-15)
