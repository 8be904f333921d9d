"""Synthetic class-imbalanced detection world and the toy linear detector.

A scene is a set of ground-truth boxes on a small canvas plus a feature
model that turns any query box into a D-dimensional observation: the class
prototype of the best-overlapping object scaled by gain * IoU, a small
geometry block holding that object's corner offsets from the query box
(what a real image patch would reveal), a per-object appearance distortion
fixed for the life of the instance, and deterministic Gaussian noise keyed
by the box coordinates.  Boxes with no overlap see pure noise.

The instance distortion is the part of the observation that no amount of
re-augmentation averages out: a detector trained on few labeled scenes
inherits their particular distortions, which is exactly the finite-sample
bias that extra (pseudo-labeled) instances can wash away.

The detector is linear: a softmax classifier and a box-offset regression
head over the same features.  It is intentionally tiny; the training
dynamics under study come from the pseudo-labeling loop, not the model.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .detection import CandidateBatch, Source
from .geometry import BBox, jitter_boxes, repair_boxes
from .losses import softmax
from .weight_update import ModelParams

logger = logging.getLogger(__name__)

# Geometry block width appended to the prototype features.
_GEO_DIMS = 4


@dataclass(frozen=True)
class WorldConfig:
    """Scale and observation-model parameters of the synthetic world."""

    n_classes: int = 5
    feature_dim: int = 16
    canvas: tuple[float, float] = (40.0, 40.0)
    min_objects: int = 1
    max_objects: int = 6
    min_object_size: float = 4.0
    max_object_size: float = 12.0
    feature_gain: float = 4.0
    geo_gain: float = 2.0
    obj_sigma: float = 0.0
    noise_sigma: float = 0.3
    proposal_jitter: float = 0.15
    pos_fraction: float = 0.5
    proto_overlap: float = 0.0

    def __post_init__(self):
        if self.feature_dim <= _GEO_DIMS:
            raise ValueError("feature_dim must exceed the geometry block")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if not (1 <= self.min_objects <= self.max_objects):
            raise ValueError("invalid objects-per-scene range")
        if not (0 <= self.proto_overlap < 1):
            raise ValueError("proto_overlap must lie in [0, 1)")


@dataclass
class ImbalanceSpec:
    """Dataset composition: class mix and labeled/unlabeled split sizes.

    When ``labeled_fraction`` is given it re-splits the combined scene
    budget ``n_labeled + n_unlabeled``; otherwise the two counts are taken
    as-is.
    """

    class_frequencies: np.ndarray
    n_labeled: int = 50
    n_unlabeled: int = 500
    labeled_fraction: float | None = None

    def __post_init__(self):
        f = np.asarray(self.class_frequencies, dtype=np.float64)
        if np.any(f <= 0):
            raise ValueError("class frequencies must be positive")
        if abs(float(f.sum()) - 1.0) > 1e-9:
            raise ValueError("class frequencies must sum to 1")
        self.class_frequencies = f
        if self.labeled_fraction is not None and not (0 < self.labeled_fraction <= 1):
            raise ValueError("labeled_fraction must lie in (0, 1]")

    def split_counts(self) -> tuple[int, int]:
        if self.labeled_fraction is None:
            return self.n_labeled, self.n_unlabeled
        total = self.n_labeled + self.n_unlabeled
        n_lab = int(round(total * self.labeled_fraction))
        return n_lab, total - n_lab


def zipf_frequencies(n_classes: int, exponent: float = 1.0) -> np.ndarray:
    """Power-law class frequencies f_c proportional to 1/(c+1)^exponent."""
    f = 1.0 / np.arange(1, n_classes + 1, dtype=np.float64) ** exponent
    return f / f.sum()


@dataclass(frozen=True)
class FeatureModel:
    """Deterministic observation function for query boxes in one scene."""

    prototypes: np.ndarray  # (C, D), geometry columns zero
    noise_seed: int
    noise_sigma: float
    gain: float
    geo_gain: float
    obj_seed: int = 0
    obj_sigma: float = 0.0
    aug_seed: int = 0
    aug_sigma: float = 0.0

    def __call__(self, boxes: np.ndarray, obj_boxes: np.ndarray,
                 obj_classes: np.ndarray) -> np.ndarray:
        return kernels.scene_features(
            boxes, obj_boxes, obj_classes, self.prototypes, self.gain,
            self.geo_gain, self.obj_sigma, self.obj_seed, self.noise_sigma,
            self.noise_seed, self.aug_sigma, self.aug_seed)


@dataclass(eq=False)
class Scene:
    """Ground-truth objects plus the observation model for one image.

    ``obs_jitter`` and ``dropout_p`` describe how augmentation perturbs
    *observations* (proposal geometry and candidate survival); the object
    list itself is never touched by augmentation.
    """

    canvas: tuple[float, float]
    objects: list[tuple[BBox, int]]
    features: FeatureModel
    proposal_jitter: float = 0.15
    pos_fraction: float = 0.5
    neg_size: tuple[float, float] = (4.0, 12.0)
    obs_jitter: float = 0.0
    dropout_p: float = 0.0
    obj_boxes: np.ndarray = field(init=False, repr=False)
    obj_classes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w, h = self.canvas
        for box, cls in self.objects:
            if box.x1 < 0 or box.y1 < 0 or box.x2 > w or box.y2 > h:
                raise ValueError(f"object {box} outside canvas {self.canvas}")
        self.obj_boxes = (np.stack([b.as_array() for b, _ in self.objects])
                          if self.objects else np.empty((0, 4)))
        self.obj_classes = np.array([c for _, c in self.objects], dtype=np.int64)

    def features_for(self, boxes: np.ndarray) -> np.ndarray:
        return self.features(boxes, self.obj_boxes, self.obj_classes)


def param_count(feature_dim: int, n_classes: int) -> int:
    width = n_classes + 1
    return feature_dim * width + width + feature_dim * 4 + 4


def param_views(values: np.ndarray, feature_dim: int, n_classes: int):
    """Slice a flat parameter vector into (w_cls, b_cls, w_reg, b_reg) views."""
    d, width = feature_dim, n_classes + 1
    a = d * width
    b = a + width
    c = b + d * 4
    return (values[:a].reshape(d, width), values[a:b],
            values[b:c].reshape(d, 4), values[c:c + 4])


@dataclass
class ToyDetector:
    """Linear classifier + linear box-offset regressor over scene features."""

    params: ModelParams
    feature_dim: int
    n_classes: int

    def __post_init__(self):
        expected = param_count(self.feature_dim, self.n_classes)
        if len(self.params) != expected:
            raise ValueError(f"expected {expected} params, got {len(self.params)}")
        self.w_cls, self.b_cls, self.w_reg, self.b_reg = param_views(
            self.params.values, self.feature_dim, self.n_classes)

    @classmethod
    def zeros(cls, feature_dim: int, n_classes: int) -> "ToyDetector":
        n = param_count(feature_dim, n_classes)
        return cls(ModelParams(np.zeros(n)), feature_dim, n_classes)

    def logits(self, feats: np.ndarray) -> np.ndarray:
        return feats @ self.w_cls + self.b_cls

    def score(self, feats: np.ndarray) -> np.ndarray:
        return softmax(self.logits(feats))

    def refine(self, boxes: np.ndarray, feats: np.ndarray) -> np.ndarray:
        return boxes + feats @ self.w_reg + self.b_reg


class SceneView:
    """A detector bound to one observed scene.

    Gives box-level scoring/refinement for callers that hold boxes rather
    than features (jitter-bagging, re-scoring of refined boxes).
    """

    __slots__ = ("detector", "scene")

    def __init__(self, detector: ToyDetector, scene: Scene):
        self.detector = detector
        self.scene = scene

    @property
    def canvas(self):
        return self.scene.canvas

    def score_boxes(self, boxes: np.ndarray) -> np.ndarray:
        return self.detector.score(self.scene.features_for(boxes))

    def refine_boxes(self, boxes: np.ndarray) -> np.ndarray:
        return self.detector.refine(boxes, self.scene.features_for(boxes))


class WorldModel:
    """Scene factory with prototypes shared across every generated scene."""

    def __init__(self, cfg: WorldConfig, prototypes: np.ndarray):
        self.cfg = cfg
        self.prototypes = prototypes

    @classmethod
    def create(cls, cfg: WorldConfig, rng) -> "WorldModel":
        proto_dim = cfg.feature_dim - _GEO_DIMS
        if proto_dim < cfg.n_classes + 1:
            raise ValueError("feature_dim too small for distinct prototypes")
        raw = rng.normal(size=(proto_dim, cfg.n_classes + 1))
        q = np.linalg.qr(raw)[0].T  # orthonormal rows
        # Mix a shared direction into every class so pairwise prototype
        # cosine equals proto_overlap exactly (unit norm preserved).
        ov = cfg.proto_overlap
        raw = np.sqrt(1 - ov) * q[: cfg.n_classes] + np.sqrt(ov) * q[-1]
        prototypes = np.zeros((cfg.n_classes, cfg.feature_dim))
        prototypes[:, :proto_dim] = raw
        return cls(cfg, prototypes)

    def make_scene(self, class_frequencies: np.ndarray, rng) -> Scene:
        cfg = self.cfg
        w, h = cfg.canvas
        n_obj = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
        classes = rng.choice(cfg.n_classes, size=n_obj, p=class_frequencies)
        sizes = rng.uniform(cfg.min_object_size, cfg.max_object_size, (n_obj, 2))
        cx = rng.uniform(sizes[:, 0] / 2, w - sizes[:, 0] / 2)
        cy = rng.uniform(sizes[:, 1] / 2, h - sizes[:, 1] / 2)
        objects = [
            (BBox(cx[i] - sizes[i, 0] / 2, cy[i] - sizes[i, 1] / 2,
                  cx[i] + sizes[i, 0] / 2, cy[i] + sizes[i, 1] / 2), int(classes[i]))
            for i in range(n_obj)
        ]
        fm = FeatureModel(
            prototypes=self.prototypes,
            noise_seed=int(rng.integers(2 ** 63)),
            noise_sigma=cfg.noise_sigma,
            gain=cfg.feature_gain,
            geo_gain=cfg.geo_gain,
            obj_seed=int(rng.integers(2 ** 63)),
            obj_sigma=cfg.obj_sigma,
        )
        return Scene(canvas=cfg.canvas, objects=objects, features=fm,
                     proposal_jitter=cfg.proposal_jitter,
                     pos_fraction=cfg.pos_fraction,
                     neg_size=(cfg.min_object_size, cfg.max_object_size))

    def make_scenes(self, n: int, class_frequencies: np.ndarray, rng) -> list[Scene]:
        return [self.make_scene(class_frequencies, rng) for _ in range(n)]


def generate_dataset(spec: ImbalanceSpec, rng,
                     world: WorldConfig | None = None,
                     model: WorldModel | None = None):
    """Generate the (labeled, unlabeled) scene split for one experiment.

    A fresh :class:`WorldModel` (class prototypes) is drawn from ``rng``
    unless an existing one is passed in.
    """
    cfg = world or WorldConfig()
    wm = model or WorldModel.create(cfg, rng)
    n_lab, n_unlab = spec.split_counts()
    labeled = wm.make_scenes(n_lab, spec.class_frequencies, rng)
    unlabeled = wm.make_scenes(n_unlab, spec.class_frequencies, rng)
    return labeled, unlabeled


def augment_weak(s: Scene, rng, sigma: float = 0.05,
                 box_jitter: float = 0.02) -> Scene:
    """Lightly perturbed observation of a scene (extra feature noise plus
    extra proposal jitter).  All-zero parameters return the scene itself."""
    return _augment(s, rng, sigma, box_jitter, 0.0)


def augment_strong(s: Scene, rng, sigma: float = 0.2, box_jitter: float = 0.06,
                   dropout: float = 0.1) -> Scene:
    """Heavily perturbed observation: larger feature noise, larger proposal
    jitter and random candidate dropout."""
    return _augment(s, rng, sigma, box_jitter, dropout)


def _augment(s: Scene, rng, sigma: float, box_jitter: float,
             dropout: float) -> Scene:
    if sigma == 0 and box_jitter == 0 and dropout == 0:
        return s
    fm = dataclasses.replace(s.features, aug_sigma=sigma,
                             aug_seed=int(rng.integers(2 ** 63)))
    return dataclasses.replace(s, features=fm, obs_jitter=box_jitter,
                               dropout_p=dropout)


def detect(model: ToyDetector, s: Scene, n_proposals: int, rng,
           source: Source = Source.TEACHER) -> CandidateBatch:
    """Run the toy detector on one scene.

    Proposals are ground-truth boxes jittered by
    ``proposal_jitter + obs_jitter`` plus uniform negatives, mixed by
    ``pos_fraction``.  Each proposal is scored on its feature vector and
    the regression head refines its box; refined corners stay raw (no
    repair), so downstream losses can differentiate through them.  With
    ``dropout_p`` > 0 candidates are dropped after generation, otherwise
    exactly ``n_proposals`` come back.

    RNG draw order: positive indices, positive jitter, negative sizes,
    negative centers, dropout mask.
    """
    w, h = s.canvas
    n_obj = s.obj_boxes.shape[0]
    n_pos = int(round(n_proposals * s.pos_fraction)) if n_obj else 0
    n_neg = n_proposals - n_pos
    parts = []
    if n_pos:
        pick = rng.integers(0, n_obj, n_pos)
        frac = s.proposal_jitter + s.obs_jitter
        parts.append(jitter_boxes(s.obj_boxes[pick], frac, rng, canvas=s.canvas))
    if n_neg:
        lo, hi = s.neg_size
        sizes = rng.uniform(lo, hi, (n_neg, 2))
        cx = rng.uniform(sizes[:, 0] / 2, w - sizes[:, 0] / 2)
        cy = rng.uniform(sizes[:, 1] / 2, h - sizes[:, 1] / 2)
        parts.append(np.stack([cx - sizes[:, 0] / 2, cy - sizes[:, 1] / 2,
                               cx + sizes[:, 0] / 2, cy + sizes[:, 1] / 2], axis=1))
    boxes = np.concatenate(parts) if parts else np.empty((0, 4))
    feats = s.features_for(boxes)
    probs = model.score(feats)
    refined = model.refine(boxes, feats)
    batch = CandidateBatch(refined, probs, source, feats)
    if s.dropout_p > 0:
        batch = batch.select(rng.random(len(batch)) >= s.dropout_p)
    return batch


def student_sgd_step(model: ToyDetector, grads: ModelParams,
                     lr: float) -> ToyDetector:
    """One SGD step; returns a new detector, leaving the input untouched."""
    if len(grads) != len(model.params):
        raise ValueError("gradient dimension mismatch")
    return ToyDetector(ModelParams(model.params.values - lr * grads.values),
                       model.feature_dim, model.n_classes)


def oracle_detector(wm: WorldModel, cls_scale: float = 1.0,
                    bg_bias: float = 1.2, reg_scale: float = 1.0) -> ToyDetector:
    """Planted near-ideal parameters for the given world.

    Classifier columns are the class prototypes (so the class logit tracks
    gain * IoU); the regression head inverts the geometry block, which
    holds the corner offsets times geo_gain, so localization is exact up
    to observation noise.  Used as a sanity reference and as a
    controllable 'converged teacher' in tests.
    """
    cfg = wm.cfg
    det = ToyDetector.zeros(cfg.feature_dim, cfg.n_classes)
    for c in range(cfg.n_classes):
        det.w_cls[:, c] = cls_scale * wm.prototypes[c]
    det.b_cls[-1] = bg_bias
    for k in range(_GEO_DIMS):
        det.w_reg[cfg.feature_dim - _GEO_DIMS + k, k] = reg_scale / cfg.geo_gain
    return det
