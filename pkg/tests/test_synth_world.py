import numpy as np
import pytest

from ssodsim.detection import Source, foreground_scores, nms
from ssodsim.evaluator import map_summary
from ssodsim.geometry import repair_boxes
from ssodsim.synth_world import (FeatureModel, ImbalanceSpec, Scene,
                                 ToyDetector, WorldConfig, WorldModel,
                                 augment_strong, augment_weak, detect,
                                 generate_dataset, oracle_detector,
                                 param_count, param_views, zipf_frequencies)


def test_zipf_frequencies_exact():
    f = zipf_frequencies(5, 1.0)
    h = 1 + 1 / 2 + 1 / 3 + 1 / 4 + 1 / 5
    np.testing.assert_allclose(f, [1 / h, 1 / (2 * h), 1 / (3 * h),
                                   1 / (4 * h), 1 / (5 * h)], atol=1e-15)
    np.testing.assert_allclose(zipf_frequencies(4, 0.0), 0.25, atol=1e-15)
    assert zipf_frequencies(6, 2.0).sum() == pytest.approx(1.0, abs=1e-12)


def test_imbalance_spec_split_counts():
    f = zipf_frequencies(3)
    spec = ImbalanceSpec(f, n_labeled=10, n_unlabeled=90)
    assert spec.split_counts() == (10, 90)
    refrac = ImbalanceSpec(f, n_labeled=10, n_unlabeled=90,
                           labeled_fraction=0.25)
    assert refrac.split_counts() == (25, 75)
    with pytest.raises(ValueError):
        ImbalanceSpec(np.array([0.5, 0.5, 0.1]))
    with pytest.raises(ValueError):
        ImbalanceSpec(f, labeled_fraction=0.0)


def test_world_config_validation():
    with pytest.raises(ValueError):
        WorldConfig(feature_dim=4)
    with pytest.raises(ValueError):
        WorldConfig(n_classes=1)
    with pytest.raises(ValueError):
        WorldConfig(min_objects=3, max_objects=2)


def test_prototypes_unit_norm_with_planted_overlap():
    for ov in (0.0, 0.5):
        wm = WorldModel.create(WorldConfig(proto_overlap=ov),
                               np.random.default_rng(0))
        protos = wm.prototypes
        assert protos.shape == (5, 16)
        np.testing.assert_allclose(np.abs(protos[:, -4:]).max(), 0.0,
                                   atol=1e-15)
        norms = np.linalg.norm(protos, axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-9)
        gram = protos @ protos.T
        off = gram[~np.eye(5, dtype=bool)]
        np.testing.assert_allclose(off, ov, atol=1e-9)


def test_make_scene_respects_world_bounds():
    cfg = WorldConfig()
    wm = WorldModel.create(cfg, np.random.default_rng(1))
    rng = np.random.default_rng(2)
    freqs = zipf_frequencies(cfg.n_classes)
    for _ in range(50):
        sc = wm.make_scene(freqs, rng)
        n = len(sc.objects)
        assert cfg.min_objects <= n <= cfg.max_objects
        assert sc.obj_boxes.shape == (n, 4)
        assert sc.obj_boxes.min() >= 0
        assert sc.obj_boxes[:, 0::2].max() <= cfg.canvas[0]
        w = sc.obj_boxes[:, 2] - sc.obj_boxes[:, 0]
        h = sc.obj_boxes[:, 3] - sc.obj_boxes[:, 1]
        assert np.all(w >= cfg.min_object_size - 1e-9)
        assert np.all(w <= cfg.max_object_size + 1e-9)
        assert np.all(h >= cfg.min_object_size - 1e-9)


def test_class_frequencies_follow_spectrum():
    cfg = WorldConfig()
    wm = WorldModel.create(cfg, np.random.default_rng(3))
    rng = np.random.default_rng(4)
    freqs = zipf_frequencies(cfg.n_classes)
    counts = np.zeros(cfg.n_classes)
    for sc in wm.make_scenes(600, freqs, rng):
        for c in sc.obj_classes:
            counts[c] += 1
    total = counts.sum()
    for c in range(cfg.n_classes):
        sigma = np.sqrt(total * freqs[c] * (1 - freqs[c]))
        assert abs(counts[c] - total * freqs[c]) < 4 * sigma


def test_scene_rejects_objects_outside_canvas():
    from ssodsim.geometry import BBox

    fm = FeatureModel(prototypes=np.zeros((2, 8)), noise_seed=0,
                      noise_sigma=0.0, gain=1.0, geo_gain=1.0)
    with pytest.raises(ValueError):
        Scene(canvas=(10.0, 10.0), objects=[(BBox(5, 5, 12, 8), 0)],
              features=fm)


def test_features_are_deterministic_and_box_keyed():
    wm = WorldModel.create(WorldConfig(), np.random.default_rng(5))
    sc = wm.make_scene(zipf_frequencies(5), np.random.default_rng(6))
    boxes = sc.obj_boxes
    f1 = sc.features_for(boxes)
    f2 = sc.features_for(boxes)
    np.testing.assert_array_equal(f1, f2)
    # a ground-truth box sees its own prototype times gain (IoU 1);
    # a box overlapping nothing sees only noise
    proto = wm.prototypes[sc.obj_classes[0]]
    on_signal = float(f1[0] @ proto)
    far = np.array([[0.0, 0.0, 0.5, 0.5]])
    off_signal = float(sc.features_for(far)[0] @ proto)
    assert on_signal > wm.cfg.feature_gain / 2
    assert abs(off_signal) < wm.cfg.feature_gain / 2
    assert on_signal > abs(off_signal)


def test_param_views_share_storage():
    d, c = 8, 3
    vec = np.zeros(param_count(d, c))
    w_cls, b_cls, w_reg, b_reg = param_views(vec, d, c)
    w_cls[0, 0] = 5.0
    b_reg[-1] = 2.0
    assert vec[0] == 5.0 and vec[-1] == 2.0
    assert w_cls.shape == (d, c + 1)
    assert w_reg.shape == (d, 4)
    det = ToyDetector.zeros(d, c)
    assert len(det.params) == param_count(d, c)
    with pytest.raises(ValueError):
        ToyDetector(det.params, d + 1, c)


def test_detect_shapes_and_probability_rows():
    wm = WorldModel.create(WorldConfig(), np.random.default_rng(7))
    sc = wm.make_scene(zipf_frequencies(5), np.random.default_rng(8))
    det = oracle_detector(wm)
    batch = detect(det, sc, 64, np.random.default_rng(9), Source.TEACHER)
    assert len(batch) == 64
    assert batch.probs.shape == (64, 6)
    np.testing.assert_allclose(batch.probs.sum(axis=1), 1.0, atol=1e-9)
    assert batch.features.shape == (64, 16)
    assert batch.source is Source.TEACHER


def test_detect_dropout_removes_candidates():
    wm = WorldModel.create(WorldConfig(), np.random.default_rng(10))
    sc = wm.make_scene(zipf_frequencies(5), np.random.default_rng(11))
    view = augment_strong(sc, np.random.default_rng(12), sigma=0.1,
                          box_jitter=0.05, dropout=0.5)
    batch = detect(oracle_detector(wm), view, 200, np.random.default_rng(13))
    assert 40 < len(batch) < 160  # ~Binomial(200, 0.5)


def test_augment_weak_keeps_objects_and_changes_observation():
    wm = WorldModel.create(WorldConfig(), np.random.default_rng(14))
    sc = wm.make_scene(zipf_frequencies(5), np.random.default_rng(15))
    view = augment_weak(sc, np.random.default_rng(16), sigma=0.1,
                        box_jitter=0.02)
    np.testing.assert_array_equal(view.obj_boxes, sc.obj_boxes)
    np.testing.assert_array_equal(view.obj_classes, sc.obj_classes)
    assert view.obs_jitter == 0.02
    assert view.dropout_p == 0.0
    f_clean = sc.features_for(sc.obj_boxes)
    f_view = view.features_for(sc.obj_boxes)
    assert np.abs(f_clean - f_view).max() > 0.0
    # zero-strength augmentation is the identity
    assert augment_weak(sc, np.random.default_rng(0), 0.0, 0.0) is sc


def test_generate_dataset_split_sizes_and_shared_world():
    rng = np.random.default_rng(17)
    spec = ImbalanceSpec(zipf_frequencies(5), n_labeled=4, n_unlabeled=9)
    labeled, unlabeled = generate_dataset(spec, rng)
    assert len(labeled) == 4 and len(unlabeled) == 9


def test_oracle_detector_is_accurate():
    """The planted parameters must solve their own world; this pins the
    world as learnable and the evaluator as sane in one shot."""
    wcfg = WorldConfig(feature_gain=10.0, geo_gain=1.0, proto_overlap=0.5)
    wm = WorldModel.create(wcfg, np.random.default_rng(18))
    det = oracle_detector(wm, cls_scale=1.0, bg_bias=1.2)
    rng = np.random.default_rng(19)
    freqs = zipf_frequencies(wcfg.n_classes)
    collections = []
    for sc in wm.make_scenes(32, freqs, rng):
        cands = nms(detect(det, sc, 100, rng), 0.7)
        fsc, fcls = foreground_scores(cands)
        boxes = repair_boxes(cands.boxes, sc.canvas)
        collections.append((boxes, fcls, fsc, sc.obj_boxes, sc.obj_classes))
    m50, _, _, _ = map_summary(collections)
    assert m50 > 0.9


def test_student_sgd_step_direction():
    from ssodsim.synth_world import student_sgd_step
    from ssodsim.weight_update import ModelParams

    det = ToyDetector.zeros(8, 3)
    g = ModelParams(np.ones(param_count(8, 3)))
    out = student_sgd_step(det, g, lr=0.1)
    np.testing.assert_allclose(out.params.values, -0.1, atol=1e-15)
    # input untouched
    assert det.params.values.max() == 0.0
    with pytest.raises(ValueError):
        student_sgd_step(det, ModelParams(np.ones(3)), 0.1)
