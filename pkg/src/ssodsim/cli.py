"""Command line front end.

Subcommands::

    train      run one training job, write metrics CSV / summary JSON
    ablate     sweep one ablation dimension over a seed set
    eval       score a saved parameter dump on freshly drawn scenes
    gradcheck  finite-difference audit of every analytic gradient
    bench      compare the compiled and numpy kernel backends

Every ``RunConfig`` field is exposed as a ``--flag`` (underscores become
hyphens, ``lambda_`` is spelled ``--lambda``); ``--config FILE`` loads a
flat key=value file first and explicit flags override it.  A training run
that hits non-finite numbers exits with code 3 after writing a diagnostics
JSON to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time

import numpy as np

from . import kernels
from .config import (BAGGING_METRICS, THRESHOLD_MODES, UPDATE_MODES,
                     RunConfig, load_config)
from .pipeline import (ABLATION_DIMENSIONS, NumericalAbort, ablate,
                       ablation_csv_text, evaluate_detector, load_detector,
                       run_summary, run_training, save_params,
                       write_metrics_csv, write_summary_json)

_CHOICES = {
    "threshold_mode": THRESHOLD_MODES,
    "update_mode": UPDATE_MODES,
    "bagging_metric": BAGGING_METRICS,
}


def _add_config_flags(parser: argparse.ArgumentParser):
    grp = parser.add_argument_group(
        "config overrides", "any RunConfig field; see configs/*.cfg")
    for f in dataclasses.fields(RunConfig):
        public = "lambda" if f.name == "lambda_" else f.name
        flag = "--" + public.replace("_", "-")
        kw = dict(dest=f.name, default=argparse.SUPPRESS,
                  help=f"default: {f.default}")
        if f.type == "bool":
            grp.add_argument(flag, action=argparse.BooleanOptionalAction, **kw)
        elif f.type == "int":
            grp.add_argument(flag, type=int, **kw)
        elif f.type in ("float", "float | None"):
            grp.add_argument(flag, type=float, **kw)
        else:
            grp.add_argument(flag, choices=_CHOICES.get(f.name), **kw)


def _build_config(args) -> RunConfig:
    names = {f.name for f in dataclasses.fields(RunConfig)}
    overrides = {k: v for k, v in vars(args).items() if k in names}
    return load_config(getattr(args, "config", None), overrides)


def _emit(doc: dict, args):
    text = json.dumps(doc, indent=2, sort_keys=True)
    print(text)
    if getattr(args, "summary", None):
        with open(args.summary, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def _abort(exc: NumericalAbort) -> int:
    json.dump(exc.diagnostics, sys.stderr, indent=2, sort_keys=True,
              default=str)
    sys.stderr.write("\n")
    return 3


def _cmd_train(args) -> int:
    cfg = _build_config(args)
    try:
        result = run_training(cfg)
    except NumericalAbort as exc:
        return _abort(exc)
    if args.out:
        write_metrics_csv(result.records, args.out)
    if args.params:
        save_params(result, args.params)
    _emit(run_summary(result), args)
    return 0


def _cmd_ablate(args) -> int:
    base = _build_config(args)
    seeds = args.seeds if args.seeds else [base.seed]
    try:
        result = ablate(base, args.dimension, seeds)
    except NumericalAbort as exc:
        return _abort(exc)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(ablation_csv_text(result))
    _emit({"dimension": result.dimension, "seeds": seeds,
           "backend": kernels.backend(), "summary": result.summary}, args)
    return 0


def _cmd_eval(args) -> int:
    cfg = _build_config(args)
    detector = load_detector(args.params, args.which)
    rec = evaluate_detector(detector, cfg)
    _emit({"params": args.params, "which": args.which,
           "backend": kernels.backend(), "n_eval_scenes": cfg.n_eval_scenes,
           "map_50": rec.map_50, "map_75": rec.map_75,
           "map_coco": rec.map_coco,
           "per_class_ap": {str(k): v for k, v in rec.per_class_ap.items()},
           "config": cfg.to_dict()}, args)
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradcheck import report, run_all

    results = run_all(seed=args.seed, points=args.points,
                      tolerance=args.tolerance)
    print(report(results))
    return 0 if all(r.passed for r in results) else 1


def _bench_case(name, fn, args_tuple, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args_tuple)
        best = min(best, time.perf_counter() - t0)
    return best, out


def _cmd_bench(args) -> int:
    impls = kernels.available_backends()
    if "compiled" not in impls:
        print("compiled backend not built; nothing to compare")
    rng = np.random.default_rng(0)
    n = args.size
    boxes = np.sort(rng.uniform(0, 40, (n, 2, 2)), axis=1).reshape(n, 4)
    refs = np.sort(rng.uniform(0, 40, (max(4, n // 8), 2, 2)),
                   axis=1).reshape(-1, 4)
    protos = rng.normal(size=(5, 16))
    protos[:, -4:] = 0.0
    cases = [
        ("iou_matrix", "iou_matrix", (boxes, refs)),
        ("nms_mask", "nms_mask", (boxes, 0.7)),
        ("max_iou_assign", "max_iou_assign", (boxes, refs)),
        ("box_noise", "box_noise", (boxes, 1234, 16)),
        ("scene_features", "scene_features",
         (boxes, refs[:6], np.arange(6) % 5, protos, 10.0, 1.0,
          0.0, 0, 0.3, 99, 0.05, 7)),
    ]
    print(f"kernel microbenchmarks, n={n}, best of {args.repeats}")
    print(f"{'kernel':<16} " + " ".join(f"{b:>12}" for b in impls)
          + ("   speedup" if len(impls) > 1 else ""))
    for label, attr, case_args in cases:
        times = {}
        outs = {}
        for bname, mod in impls.items():
            times[bname], outs[bname] = _bench_case(
                label, getattr(mod, attr), case_args, args.repeats)
        row = f"{label:<16} " + " ".join(f"{times[b] * 1e6:>10.1f}us"
                                         for b in impls)
        if len(impls) > 1:
            a, b = outs["python"], outs["compiled"]
            if isinstance(a, tuple):
                same = all(np.allclose(x, y, atol=1e-12)
                           for x, y in zip(a, b))
            else:
                same = np.allclose(a, b, atol=1e-12)
            row += f"   {times['python'] / times['compiled']:>6.2f}x"
            row += "" if same else "   MISMATCH"
        print(row)
    if args.train_iters:
        cfg = load_config(getattr(args, "config", None),
                          {"iterations": args.train_iters,
                           "burn_in_iters": min(100, args.train_iters // 2),
                           "eval_every": args.train_iters})
        t0 = time.perf_counter()
        run_training(cfg)
        dt = time.perf_counter() - t0
        print(f"end-to-end train ({args.train_iters} iters, "
              f"{kernels.backend()} backend): {dt:.2f}s")
        print("rerun under SSODSIM_PURE_PYTHON=1 for the numpy figure")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssodsim",
        description="teacher-student pseudo-labeling simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training job")
    p_train.add_argument("--config", help="flat key=value config file")
    p_train.add_argument("--out", help="per-iteration metrics CSV path")
    p_train.add_argument("--summary", help="summary JSON path")
    p_train.add_argument("--params", help="final parameter .npz path")
    _add_config_flags(p_train)
    p_train.set_defaults(func=_cmd_train)

    p_abl = sub.add_parser("ablate", help="sweep one ablation dimension")
    p_abl.add_argument("--dimension", required=True,
                       choices=ABLATION_DIMENSIONS)
    p_abl.add_argument("--seeds", type=int, nargs="+",
                       help="seed list (default: the base seed)")
    p_abl.add_argument("--config", help="flat key=value config file")
    p_abl.add_argument("--out", help="per-run rows CSV path")
    p_abl.add_argument("--summary", help="summary JSON path")
    _add_config_flags(p_abl)
    p_abl.set_defaults(func=_cmd_ablate)

    p_eval = sub.add_parser("eval", help="score a saved parameter dump")
    p_eval.add_argument("--params", required=True, help=".npz from train")
    p_eval.add_argument("--which", choices=("teacher", "student"),
                        default="teacher")
    p_eval.add_argument("--config", help="flat key=value config file")
    p_eval.add_argument("--summary", help="summary JSON path")
    _add_config_flags(p_eval)
    p_eval.set_defaults(func=_cmd_eval)

    p_grad = sub.add_parser("gradcheck", help="finite-difference audit")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--points", type=int, default=100)
    p_grad.add_argument("--tolerance", type=float, default=1e-5)
    p_grad.set_defaults(func=_cmd_gradcheck)

    p_bench = sub.add_parser("bench", help="kernel backend comparison")
    p_bench.add_argument("--size", type=int, default=512,
                         help="candidate boxes per kernel case")
    p_bench.add_argument("--repeats", type=int, default=20)
    p_bench.add_argument("--train-iters", type=int, default=0,
                         help="also time a short end-to-end run")
    p_bench.add_argument("--config", help="flat key=value config file")
    p_bench.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
