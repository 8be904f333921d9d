"""Run configuration: one flat record covering the trainer, the world and
the CLI.

Config files are flat ``key = value`` text ('#' starts a comment); CLI
flags override file values, which override defaults.  The key names equal
the field names except ``lambda``, which maps to ``lambda_``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .jitter_bagging import JitterConfig
from .losses import LossConfig
from .synth_world import ImbalanceSpec, WorldConfig, zipf_frequencies

THRESHOLD_MODES = ("static", "adaptive", "continuous", "dynamic_baseline")
UPDATE_MODES = ("deepcopy", "ema", "dema")
BAGGING_METRICS = ("area", "score")


@dataclass
class RunConfig:
    # run
    seed: int = 7
    iterations: int = 2000
    burn_in_iters: int = 400
    lr: float = 0.02
    lambda_: float = 2.0
    beta: float = 1.0
    eval_every: int = 100
    # threshold
    gamma: float = 0.05
    threshold_mode: str = "adaptive"
    static_tau: float = 0.7
    clamp_lo: float = 0.5
    clamp_hi: float = 0.9
    # teacher update
    alpha: float = 0.999
    update_mode: str = "dema"
    raw_alpha: bool = False
    # jitter bagging
    jitter_enabled: bool = True
    n_jitter: int = 10
    jitter_fraction: float = 0.06
    bagging_metric: str = "area"
    # loss switches
    bg_sim_enabled: bool = True
    fg_bg_dissim_enabled: bool = True
    # label generators
    gen_weak: bool = True
    gen_strong: bool = True
    # batch composition
    batch_size: int = 4
    labeled_ratio: float = 0.2
    n_proposals_train: int = 200
    n_proposals_eval: int = 100
    n_sampled: int = 64
    nms_threshold: float = 0.7
    # world
    n_classes: int = 5
    feature_dim: int = 16
    canvas_w: float = 40.0
    canvas_h: float = 40.0
    min_objects: int = 1
    max_objects: int = 6
    min_object_size: float = 4.0
    max_object_size: float = 12.0
    n_labeled: int = 12
    n_unlabeled: int = 500
    labeled_fraction: float | None = None
    n_eval_scenes: int = 48
    zipf_exponent: float = 1.0
    feature_gain: float = 10.0
    geo_gain: float = 1.0
    obj_sigma: float = 0.0
    noise_sigma: float = 0.3
    proposal_jitter: float = 0.08
    pos_fraction: float = 0.3
    proto_overlap: float = 0.5
    # augmentation
    weak_sigma: float = 0.02
    weak_jitter: float = 0.02
    strong_sigma: float = 0.05
    strong_jitter: float = 0.03
    strong_dropout: float = 0.0

    def validate(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.burn_in_iters < 0:
            raise ValueError("burn_in_iters must be >= 0")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ValueError(f"unknown threshold_mode {self.threshold_mode!r}")
        if self.update_mode not in UPDATE_MODES:
            raise ValueError(f"unknown update_mode {self.update_mode!r}")
        if self.bagging_metric not in BAGGING_METRICS:
            raise ValueError(f"unknown bagging_metric {self.bagging_metric!r}")
        if not (self.gen_weak or self.gen_strong):
            raise ValueError("at least one label generator must be enabled")
        if not (0 < self.nms_threshold <= 1):
            raise ValueError("nms_threshold must lie in (0, 1]")
        if not (0 <= self.labeled_ratio <= 1):
            raise ValueError("labeled_ratio must lie in [0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lambda_ < 0 or self.beta < 0:
            raise ValueError("lambda and beta must be non-negative")
        if not (0 <= self.alpha < 1):
            raise ValueError("alpha must lie in [0, 1)")
        if not (0 < self.static_tau <= 1):
            raise ValueError("static_tau must lie in (0, 1]")
        # sub-configs run their own validation
        self.world_config()
        self.imbalance_spec()
        self.jitter_config()
        self.loss_config()
        return self

    # Derived sub-configurations -----------------------------------------

    def world_config(self) -> WorldConfig:
        return WorldConfig(
            n_classes=self.n_classes,
            feature_dim=self.feature_dim,
            canvas=(self.canvas_w, self.canvas_h),
            min_objects=self.min_objects,
            max_objects=self.max_objects,
            min_object_size=self.min_object_size,
            max_object_size=self.max_object_size,
            feature_gain=self.feature_gain,
            geo_gain=self.geo_gain,
            obj_sigma=self.obj_sigma,
            noise_sigma=self.noise_sigma,
            proposal_jitter=self.proposal_jitter,
            pos_fraction=self.pos_fraction,
            proto_overlap=self.proto_overlap,
        )

    def imbalance_spec(self) -> ImbalanceSpec:
        return ImbalanceSpec(
            class_frequencies=zipf_frequencies(self.n_classes, self.zipf_exponent),
            n_labeled=self.n_labeled,
            n_unlabeled=self.n_unlabeled,
            labeled_fraction=self.labeled_fraction,
        )

    def jitter_config(self) -> JitterConfig:
        return JitterConfig(n_jitter=self.n_jitter, fraction=self.jitter_fraction,
                            metric=self.bagging_metric)

    def loss_config(self) -> LossConfig:
        return LossConfig(lambda_=self.lambda_, beta=self.beta)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["lambda"] = out.pop("lambda_")
        return out


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def _coerce(name: str, raw: str):
    f = _FIELDS[name]
    text = raw.strip()
    if f.type in ("bool",):
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"bad boolean for {name}: {raw!r}")
    if f.type in ("int",):
        return int(text)
    if f.type in ("float",):
        return float(text)
    if f.type == "float | None":
        return None if text.lower() in ("none", "null", "") else float(text)
    return text


def config_key(name: str) -> str:
    return "lambda_" if name == "lambda" else name


def parse_config_text(text: str) -> dict:
    """Parse flat key=value lines into a field-value dict."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ValueError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = body.split("=", 1)
        name = config_key(key.strip())
        if name not in _FIELDS:
            raise ValueError(f"line {lineno}: unknown config key {key.strip()!r}")
        out[name] = _coerce(name, raw)
    return out


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional file plus override values."""
    values = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read()))
    if overrides:
        values.update(overrides)
    return RunConfig(**values).validate()
