"""Training-loop orchestration: teacher-student pseudo-label training on
the synthetic world, ablation presets, and metric serialization.

Per-iteration flow: sample a mixed batch; the teacher detects on weak and
strong augmented views of each unlabeled scene (the two label-generator
streams); NMS; recompute the adaptive threshold from the pooled score
populations; filter to classification pseudo boxes; jitter-bag and
re-threshold into regression pseudo boxes; the student detects on a strong
view of each unlabeled scene and a weak view of each labeled scene; the
composed loss is assembled with analytic gradients; one SGD step on the
student; one teacher update (deepcopy / EMA / DEMA).  The teacher is never
touched by gradients.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from .config import RunConfig
from .detection import Source, foreground_scores, nms, sample_proposals
from .evaluator import (MetricsRecord, map_summary, match_counts,
                        quality_from_counts)
from .geometry import repair_boxes
from .jitter_bagging import refine_boxes_array, threshold_refined
from .losses import (compose_total, loss_bg_sim, loss_cls_bg, loss_cls_fg,
                     loss_fg_bg_dissim, loss_reg, score_to_logit_grads)
from .synth_world import (SceneView, ToyDetector, WorldModel, augment_strong,
                          augment_weak, detect, generate_dataset, param_count,
                          param_views, student_sgd_step)
from .thresholding import ThresholdState, compute_threshold
from .weight_update import DemaState, ModelParams, deep_copy, dema_step, ema_step

logger = logging.getLogger(__name__)

CSV_COLUMNS = (
    "iteration", "tau", "map_50", "map_75", "map_coco",
    "pl_precision", "pl_recall", "pl_fnr",
    "loss_total", "loss_sup", "loss_pl_weak", "loss_pl_strong",
    "loss_cls_fg", "loss_cls_bg", "loss_bg_sim", "loss_fg_bg_dissim",
    "loss_reg",
)


class NumericalAbort(RuntimeError):
    """Raised when the composed loss or its gradients go non-finite."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


class _ArrayPseudo:
    """Array-backed pseudo-label set used on the hot path.

    Implements the same access protocol as detection.PseudoLabelSet
    (cls_arrays / reg_array / threshold_used).
    """

    __slots__ = ("_cls_boxes", "_cls_classes", "_reg_boxes", "threshold_used")

    def __init__(self, cls_boxes, cls_classes, reg_boxes, threshold_used):
        self._cls_boxes = cls_boxes
        self._cls_classes = cls_classes
        self._reg_boxes = reg_boxes
        self.threshold_used = threshold_used

    def cls_arrays(self):
        return self._cls_boxes, self._cls_classes

    def reg_array(self):
        return self._reg_boxes


class ThresholdController:
    """Per-mode threshold policy wrapped around ThresholdState."""

    def __init__(self, cfg: RunConfig):
        self.mode = cfg.threshold_mode
        self.static_tau = cfg.static_tau
        current = cfg.static_tau if self.mode == "static" else cfg.clamp_lo
        lo = min(cfg.clamp_lo, current)
        hi = max(cfg.clamp_hi, current)
        self.state = ThresholdState(gamma=cfg.gamma, clamp_lo=lo, clamp_hi=hi,
                                    current=current,
                                    discrete=(self.mode != "continuous"))

    @property
    def value(self) -> float:
        return self.state.current

    def update(self, fg_scores, bg_scores) -> float:
        if self.mode == "static":
            return self.static_tau
        if self.mode == "dynamic_baseline":
            # simple moving-reference baseline: clamped mean fg confidence
            if len(fg_scores):
                mean = float(np.mean(fg_scores))
                self.state.current = min(max(mean, self.state.clamp_lo),
                                         self.state.clamp_hi)
            return self.state.current
        return compute_threshold(self.state, fg_scores, bg_scores)


@dataclass
class TrainResult:
    records: list
    loss_history: list
    student: ToyDetector
    teacher: ToyDetector
    config: RunConfig
    wall_time_s: float


class _GradAccumulator:
    """Flat gradient vector with parameter-layout views."""

    __slots__ = ("vec", "w_cls", "b_cls", "w_reg", "b_reg")

    def __init__(self, feature_dim: int, n_classes: int):
        self.vec = np.zeros(param_count(feature_dim, n_classes))
        self.w_cls, self.b_cls, self.w_reg, self.b_reg = param_views(
            self.vec, feature_dim, n_classes)

    def add_logit_grads(self, feats: np.ndarray, grads: np.ndarray,
                        scale: float):
        if grads.shape[0] == 0:
            return
        self.w_cls += scale * (feats.T @ grads)
        self.b_cls += scale * grads.sum(axis=0)

    def add_box_grads(self, feats: np.ndarray, grads: np.ndarray,
                      scale: float):
        if grads.shape[0] == 0:
            return
        self.w_reg += scale * (feats.T @ grads)
        self.b_reg += scale * grads.sum(axis=0)


def _check_finite(name: str, value: float, it: int, cfg: RunConfig,
                  extra: dict):
    if not np.isfinite(value):
        raise NumericalAbort(
            f"non-finite {name} at iteration {it}",
            {"iteration": it, "component": name, "value": repr(value),
             "config": cfg.to_dict(), **extra})


def run_training(cfg: RunConfig, probe=None) -> TrainResult:
    """Run the full training loop; returns records plus final models.

    ``probe``, if given, is called as ``probe(phase, iteration, student,
    teacher)`` with phase in {"pre_sgd", "post_sgd", "post_update"} — a
    test hook for invariants like teacher immutability under SGD.
    """
    cfg.validate()
    t0 = time.perf_counter()
    data_rng, train_rng = (np.random.default_rng(s)
                           for s in np.random.SeedSequence(cfg.seed).spawn(2))
    wcfg = cfg.world_config()
    spec = cfg.imbalance_spec()
    wm = WorldModel.create(wcfg, data_rng)
    labeled, unlabeled = generate_dataset(spec, data_rng, wcfg, model=wm)
    eval_scenes = wm.make_scenes(cfg.n_eval_scenes, spec.class_frequencies,
                                 data_rng)
    if not labeled:
        raise ValueError("need at least one labeled scene")

    n_lab_batch = max(1, int(round(cfg.batch_size * cfg.labeled_ratio)))
    n_unl_batch = max(0, cfg.batch_size - n_lab_batch)
    n_lab_batch = min(n_lab_batch, len(labeled))
    n_unl_batch = min(n_unl_batch, len(unlabeled))
    streams = [s for s, on in (("weak", cfg.gen_weak), ("strong", cfg.gen_strong))
               if on]

    student = ToyDetector.zeros(cfg.feature_dim, cfg.n_classes)
    teacher = ToyDetector(deep_copy(student.params), cfg.feature_dim,
                          cfg.n_classes)
    dema = (DemaState.from_teacher(teacher.params, cfg.alpha, cfg.raw_alpha)
            if cfg.update_mode == "dema" else None)
    thr = ThresholdController(cfg)
    jcfg = cfg.jitter_config()

    records: list[MetricsRecord] = []
    loss_history = []

    for it in range(1, cfg.iterations + 1):
        # supervised-only warm-up: the pseudo-label machinery stays off
        # until the student can emit confident scores, then the teacher
        # starts from a snapshot of the burned-in student
        burn_in = it <= cfg.burn_in_iters
        batch_lab = [labeled[i] for i in
                     train_rng.choice(len(labeled), n_lab_batch, replace=False)]
        batch_unl = [] if burn_in else [
            unlabeled[i] for i in
            train_rng.choice(len(unlabeled), n_unl_batch, replace=False)]

        # -- teacher pass over both augmentation streams
        teacher_out = {s: [] for s in streams}
        fg_pop, bg_pop = [], []
        for u in batch_unl:
            for sname in streams:
                if sname == "weak":
                    view = augment_weak(u, train_rng, cfg.weak_sigma,
                                        cfg.weak_jitter)
                else:
                    view = augment_strong(u, train_rng, cfg.strong_sigma,
                                          cfg.strong_jitter, cfg.strong_dropout)
                cands = nms(detect(teacher, view, cfg.n_proposals_train,
                                   train_rng, Source.TEACHER),
                            cfg.nms_threshold)
                fsc, fcls = foreground_scores(cands)
                mask = fsc > thr.value
                fg_pop.append(fsc[mask])
                bg_pop.append(cands.probs[~mask, -1])
                teacher_out[sname].append((view, cands, fsc, fcls))

        tau = thr.update(np.concatenate(fg_pop) if fg_pop else [],
                         np.concatenate(bg_pop) if bg_pop else [])

        # -- pseudo-label sets per stream and image
        pseudo = {s: [] for s in streams}
        for sname in streams:
            for view, cands, fsc, fcls in teacher_out[sname]:
                keep = fsc > tau
                cls_boxes = repair_boxes(cands.boxes[keep], view.canvas)
                tview = SceneView(teacher, view)
                if cfg.jitter_enabled:
                    refined = refine_boxes_array(cands.boxes, tview, jcfg,
                                                 train_rng)
                    reg_boxes = threshold_refined(refined, tview, tau)
                else:
                    reg_boxes = cls_boxes
                pseudo[sname].append(
                    _ArrayPseudo(cls_boxes, fcls[keep], reg_boxes, tau))

        # -- student pass: pseudo-label losses on strong views
        g_pl = _GradAccumulator(cfg.feature_dim, cfg.n_classes)
        pl_loss = {s: 0.0 for s in streams}
        comp = {"cls_fg": 0.0, "cls_bg": 0.0, "bg_sim": 0.0,
                "fg_bg_dissim": 0.0, "reg": 0.0}
        n_u = len(batch_unl)
        for i, u in enumerate(batch_unl):
            view_s = augment_strong(u, train_rng, cfg.strong_sigma,
                                    cfg.strong_jitter, cfg.strong_dropout)
            cands = sample_proposals(
                detect(student, view_s, cfg.n_proposals_train, train_rng,
                       Source.STUDENT),
                cfg.n_sampled, train_rng)
            fsc, fcls = foreground_scores(cands)
            fg_mask = fsc > tau
            fg = cands.select(fg_mask)
            bg = cands.select(~fg_mask)
            # teacher re-scores the student's observations (stop-gradient)
            t_bg = (teacher.score(bg.features)[:, -1] if len(bg)
                    else np.empty(0))
            fg_logit_g = np.zeros((len(fg), cfg.n_classes + 1))
            bg_logit_g = np.zeros((len(bg), cfg.n_classes + 1))
            reg_g = np.zeros((len(fg), 4))
            for sname in streams:
                ps = pseudo[sname][i]
                img_loss = 0.0
                # cls-fg and reg require pseudo evidence; with an empty
                # label set those terms vanish rather than defaulting
                # every candidate to background
                if len(ps.cls_arrays()[0]):
                    l_fg, g = loss_cls_fg(fg, ps)
                    if len(fg):
                        fg_logit_g += g
                    img_loss += l_fg
                    comp["cls_fg"] += l_fg / n_u
                l_bg, g = loss_cls_bg(bg, t_bg, ps)
                if len(bg):
                    bg_logit_g += g
                img_loss += l_bg
                comp["cls_bg"] += l_bg / n_u
                if cfg.bg_sim_enabled and len(bg):
                    l_sim, g_s = loss_bg_sim(bg.probs[:, -1], t_bg, cfg.beta)
                    bg_logit_g += score_to_logit_grads(
                        bg.probs, np.full(len(bg), cfg.n_classes), g_s)
                    img_loss += l_sim
                    comp["bg_sim"] += l_sim / n_u
                if cfg.fg_bg_dissim_enabled and len(fg):
                    l_dis, g_f, g_b = loss_fg_bg_dissim(fsc[fg_mask],
                                                        fsc[~fg_mask])
                    fg_logit_g += score_to_logit_grads(fg.probs,
                                                       fcls[fg_mask], g_f)
                    if len(bg):
                        bg_logit_g += score_to_logit_grads(bg.probs,
                                                           fcls[~fg_mask], g_b)
                    img_loss += l_dis
                    comp["fg_bg_dissim"] += l_dis / n_u
                if len(ps.reg_array()):
                    l_reg, g = loss_reg(fg.boxes, ps)
                    if len(fg):
                        reg_g += g
                    img_loss += l_reg
                    comp["reg"] += l_reg / n_u
                pl_loss[sname] += img_loss / n_u
            g_pl.add_logit_grads(fg.features, fg_logit_g, 1.0 / n_u)
            g_pl.add_logit_grads(bg.features, bg_logit_g, 1.0 / n_u)
            g_pl.add_box_grads(fg.features, reg_g, 1.0 / n_u)

        # -- supervised pass on weak views of labeled scenes
        g_sup = _GradAccumulator(cfg.feature_dim, cfg.n_classes)
        sup_loss = 0.0
        n_l = len(batch_lab)
        for sc in batch_lab:
            view = augment_weak(sc, train_rng, cfg.weak_sigma, cfg.weak_jitter)
            cands = sample_proposals(
                detect(student, view, cfg.n_proposals_train, train_rng,
                       Source.STUDENT),
                cfg.n_sampled, train_rng)
            gt = _ArrayPseudo(sc.obj_boxes, sc.obj_classes, sc.obj_boxes, tau)
            l_cls, g_cls = loss_cls_fg(cands, gt)
            l_reg, g_box = loss_reg(cands.boxes, gt)
            sup_loss += (l_cls + l_reg) / n_l
            g_sup.add_logit_grads(cands.features, g_cls, 1.0 / n_l)
            g_sup.add_box_grads(cands.features, g_box, 1.0 / n_l)

        pl_weak = pl_loss.get("weak", 0.0)
        pl_strong = pl_loss.get("strong", 0.0)
        for name, v in (("sup", sup_loss), ("pl_weak", pl_weak),
                        ("pl_strong", pl_strong), *comp.items()):
            _check_finite(name, v, it, cfg, {"components": dict(comp)})
        breakdown = compose_total(sup_loss, pl_weak, pl_strong, cfg.lambda_,
                                  **comp)
        loss_history.append(breakdown)

        grads = g_sup.vec + cfg.lambda_ * g_pl.vec
        if not np.all(np.isfinite(grads)):
            raise NumericalAbort(
                f"non-finite gradient at iteration {it}",
                {"iteration": it, "component": "gradients",
                 "config": cfg.to_dict()})

        if probe is not None:
            probe("pre_sgd", it, student, teacher)
        student = student_sgd_step(student, ModelParams(grads), cfg.lr)
        if probe is not None:
            probe("post_sgd", it, student, teacher)

        if burn_in:
            if it == cfg.burn_in_iters:
                # hand the burned-in student over to the teacher
                teacher = ToyDetector(deep_copy(student.params),
                                      cfg.feature_dim, cfg.n_classes)
                if dema is not None:
                    dema = DemaState.from_teacher(teacher.params, cfg.alpha,
                                                  cfg.raw_alpha)
        else:
            if cfg.update_mode == "deepcopy":
                new_params = deep_copy(student.params)
            elif cfg.update_mode == "ema":
                new_params = ema_step(teacher.params, student.params,
                                      cfg.alpha, cfg.raw_alpha)
            else:
                new_params = dema_step(dema, student.params)
            teacher = ToyDetector(new_params, cfg.feature_dim, cfg.n_classes)
        if probe is not None:
            probe("post_update", it, student, teacher)

        if it % cfg.eval_every == 0 or it == cfg.iterations:
            records.append(_evaluate(teacher, eval_scenes, cfg, it, thr.value,
                                     pseudo, batch_unl, breakdown))

    return TrainResult(records=records, loss_history=loss_history,
                       student=student, teacher=teacher, config=cfg,
                       wall_time_s=time.perf_counter() - t0)


def train(cfg: RunConfig) -> list:
    """Spec-level entry point: run and return the metric records."""
    return run_training(cfg).records


def _evaluate(teacher, eval_scenes, cfg, iteration, tau, pseudo, batch_unl,
              breakdown) -> MetricsRecord:
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 1000003,
                                                        iteration)))
    collections = []
    for sc in eval_scenes:
        cands = nms(detect(teacher, sc, cfg.n_proposals_eval, rng,
                           Source.TEACHER),
                    cfg.nms_threshold)
        fsc, fcls = foreground_scores(cands)
        boxes = repair_boxes(cands.boxes, sc.canvas)
        collections.append((boxes, fcls, fsc, sc.obj_boxes, sc.obj_classes))
    map_50, map_75, map_coco, per_class = map_summary(collections)

    tp = n_pseudo = n_gt = 0
    for sname, sets in pseudo.items():
        for ps, scene in zip(sets, batch_unl):
            boxes, classes = ps.cls_arrays()
            tp += match_counts(boxes, classes, scene.obj_boxes,
                               scene.obj_classes)
            n_pseudo += len(boxes)
            n_gt += len(scene.obj_boxes)
    precision, recall, fnr = quality_from_counts(tp, n_pseudo, n_gt)

    return MetricsRecord(iteration=iteration, tau_current=tau, map_50=map_50,
                         map_75=map_75, map_coco=map_coco,
                         per_class_ap=per_class, pl_precision=precision,
                         pl_recall=recall, pl_false_neg_rate=fnr,
                         losses=breakdown)


# -- serialization ---------------------------------------------------------

def record_row(r: MetricsRecord) -> list:
    lb = r.losses
    return [r.iteration, r.tau_current, r.map_50, r.map_75, r.map_coco,
            r.pl_precision, r.pl_recall, r.pl_false_neg_rate,
            lb.total, lb.sup, lb.pl_weak, lb.pl_strong, lb.cls_fg, lb.cls_bg,
            lb.bg_sim, lb.fg_bg_dissim, lb.reg]


def metrics_csv_text(records) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for r in records:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v)
                              for v in record_row(r)))
    return "\n".join(lines) + "\n"


def write_metrics_csv(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(metrics_csv_text(records))


def run_summary(result: TrainResult) -> dict:
    final = result.records[-1] if result.records else None
    out = {
        "config": result.config.to_dict(),
        "backend": kernels.backend(),
        "wall_time_s": result.wall_time_s,
        "n_records": len(result.records),
    }
    if final is not None:
        out["final"] = {
            "iteration": final.iteration,
            "tau": final.tau_current,
            "map_50": final.map_50,
            "map_75": final.map_75,
            "map_coco": final.map_coco,
            "per_class_ap": {str(k): v for k, v in final.per_class_ap.items()},
            "pl_precision": final.pl_precision,
            "pl_recall": final.pl_recall,
            "pl_false_neg_rate": final.pl_false_neg_rate,
            "loss_total": final.losses.total,
        }
    return out


def write_summary_json(result: TrainResult, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(run_summary(result), fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_params(result: TrainResult, path):
    """Dump final student and teacher parameter vectors to an .npz file."""
    np.savez(path, student=result.student.params.values,
             teacher=result.teacher.params.values,
             feature_dim=result.config.feature_dim,
             n_classes=result.config.n_classes)


def load_detector(path, which: str = "teacher") -> ToyDetector:
    with np.load(path) as data:
        if which not in data:
            raise KeyError(f"no '{which}' parameter vector in {path}")
        return ToyDetector(ModelParams(data[which]), int(data["feature_dim"]),
                           int(data["n_classes"]))


def evaluate_detector(detector: ToyDetector, cfg: RunConfig) -> MetricsRecord:
    """Standalone detection-quality evaluation on freshly drawn scenes.

    Rebuilds the world for ``cfg.seed`` the same way training does, so a
    detector trained under ``cfg`` is scored against scenes from the same
    class-frequency regime (not the same instances: evaluation scenes come
    after the train split in the generation stream).
    """
    cfg.validate()
    data_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[0])
    wcfg = cfg.world_config()
    spec = cfg.imbalance_spec()
    wm = WorldModel.create(wcfg, data_rng)
    generate_dataset(spec, data_rng, wcfg, model=wm)
    eval_scenes = wm.make_scenes(cfg.n_eval_scenes, spec.class_frequencies,
                                 data_rng)
    blank = compose_total(0.0, 0.0, 0.0, cfg.lambda_)
    return _evaluate(detector, eval_scenes, cfg, cfg.iterations,
                     float("nan"), {}, [], blank)


# -- ablation harness ------------------------------------------------------

ABLATION_DIMENSIONS = ("threshold", "update", "losses", "jitter", "generators")


def ablation_variants(dimension: str) -> list:
    """(name, config overrides) rows for one ablation dimension."""
    if dimension == "threshold":
        return [("static_0.7", {"threshold_mode": "static", "static_tau": 0.7}),
                ("static_0.8", {"threshold_mode": "static", "static_tau": 0.8}),
                ("static_0.9", {"threshold_mode": "static", "static_tau": 0.9}),
                ("continuous", {"threshold_mode": "continuous"}),
                ("adaptive", {"threshold_mode": "adaptive"})]
    if dimension == "update":
        return [("deepcopy", {"update_mode": "deepcopy"}),
                ("ema", {"update_mode": "ema"}),
                ("dema", {"update_mode": "dema"})]
    if dimension == "losses":
        return [("case_i", {"bg_sim_enabled": False, "fg_bg_dissim_enabled": False}),
                ("case_ii", {"bg_sim_enabled": True, "fg_bg_dissim_enabled": False}),
                ("case_iii", {"bg_sim_enabled": False, "fg_bg_dissim_enabled": True}),
                ("full", {"bg_sim_enabled": True, "fg_bg_dissim_enabled": True})]
    if dimension == "jitter":
        return [("off", {"jitter_enabled": False}),
                ("score_bagging", {"jitter_enabled": True, "bagging_metric": "score"}),
                ("area_bagging", {"jitter_enabled": True, "bagging_metric": "area"})]
    if dimension == "generators":
        return [("both", {"gen_weak": True, "gen_strong": True}),
                ("weak_only", {"gen_weak": True, "gen_strong": False}),
                ("strong_only", {"gen_weak": False, "gen_strong": True})]
    raise ValueError(f"unknown ablation dimension {dimension!r}")


@dataclass
class AblationResult:
    dimension: str
    rows: list
    summary: dict


def ablate(base: RunConfig, dimension: str, seeds=None) -> AblationResult:
    """Run every variant of one dimension over a shared seed set."""
    seeds = list(seeds) if seeds is not None else [base.seed]
    rows = []
    for name, overrides in ablation_variants(dimension):
        for seed in seeds:
            cfg = dataclasses.replace(base, seed=seed, **overrides)
            result = run_training(cfg)
            final = result.records[-1]
            rows.append({
                "variant": name, "seed": seed,
                "map_50": final.map_50, "map_75": final.map_75,
                "map_coco": final.map_coco,
                "pl_precision": final.pl_precision,
                "pl_recall": final.pl_recall,
                "pl_fnr": final.pl_false_neg_rate,
                "tau": final.tau_current,
                "wall_time_s": result.wall_time_s,
            })
            logger.info("ablate %s/%s seed %d: mAP@50 %.4f recall %.4f",
                        dimension, name, seed, final.map_50, final.pl_recall)
    summary = {}
    for name, _ in ablation_variants(dimension):
        sub = [r for r in rows if r["variant"] == name]
        summary[name] = {
            k: float(np.median([r[k] for r in sub]))
            for k in ("map_50", "map_75", "map_coco", "pl_precision",
                      "pl_recall")
        }
    return AblationResult(dimension=dimension, rows=rows, summary=summary)


def ablation_csv_text(result: AblationResult) -> str:
    cols = ["variant", "seed", "map_50", "map_75", "map_coco",
            "pl_precision", "pl_recall", "pl_fnr", "tau", "wall_time_s"]
    lines = [",".join(cols)]
    for r in result.rows:
        lines.append(",".join(repr(r[c]) if isinstance(r[c], float)
                              else str(r[c]) for c in cols))
    return "\n".join(lines) + "\n"
