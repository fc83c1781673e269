"""``leaklab`` command line.

Exit codes: 0 on success, 1 on a usage error, 2 when the command itself fails.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .data import (
    dataset_from_dict,
    dataset_to_dict,
    gen_modular_addition,
    gen_toy_2d,
    make_partition,
    partition_from_dict,
    partition_to_dict,
    round_half_up,
    sample_random_dataset,
)
from .distill import (
    SoftLabelSet,
    TrainConfig,
    make_soft_labels,
    one_hot,
    pinv_student,
    soft_labels_to_dict,
    train_student,
    train_teacher,
)
from .errors import LeaklabError
from .harness import (
    MODES,
    SweepConfig,
    _apply_transform,
    emit_curves,
    emit_decision_boundary,
    emit_heatmap,
    parse_transform,
    run_sweep,
    store_threshold,
    ResultStore,
)
from .metrics import THRESHOLD_NAMES, Cutoffs, MetricsRecord, accuracy_from_logits, classify_regime, mse_from_logits
from .models import forward_logits, model_from_dict, model_to_dict
from .numkit import RngState

log = logging.getLogger("leaklab")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _transform_arg(value: str) -> str:
    try:
        parse_transform(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return value


def _hidden_arg(value: str) -> list[int]:
    try:
        return [int(v) for v in value.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"hidden widths must be comma-separated integers, got {value!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for all randomness")
    common.add_argument("--out", default=None, help="output file or directory")
    common.add_argument("--deterministic", action="store_true", help="omit timestamps and durations from outputs")
    common.add_argument("--json-errors", action="store_true", help="report errors as JSON on stderr")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="leaklab", description="Label leakage in knowledge distillation experiments.")
    parser.add_argument("--version", action="version", version=f"leaklab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", parents=[common], help="generate a dataset (and optionally a split)")
    p.add_argument("--kind", choices=("random_iid", "modular_addition", "toy2d"), default="random_iid")
    p.add_argument("--n", type=int, default=None, help="number of samples")
    p.add_argument("--alpha", type=float, default=None, help="sets n = round(alpha * d)")
    p.add_argument("--d", type=int, default=200)
    p.add_argument("--c", type=int, default=2)
    p.add_argument("--p", type=int, default=23, help="modulus for modular addition")
    p.add_argument("--rho", type=float, default=None, help="also write a teacher/student split")
    p.add_argument("--teacher-frac", type=float, default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-teacher", parents=[common], help="train a teacher on one-hot labels")
    p.add_argument("--data", required=True, help="dataset JSON from gen-data")
    p.add_argument("--arch", choices=("linear", "mlp1", "mlp2"), default="linear")
    p.add_argument("--hidden", type=_hidden_arg, default=[])
    p.add_argument("--steps", type=int, default=10_000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--stop-loss", type=float, default=None)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("distill", parents=[common], help="train a student on the teacher's soft labels")
    p.add_argument("--data", required=True)
    p.add_argument("--teacher", required=True, help="model JSON from train-teacher")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--mode", choices=MODES, default="ce")
    p.add_argument("--transform", type=_transform_arg, default="none")
    p.add_argument("--arch", choices=("linear", "mlp1", "mlp2"), default=None, help="defaults to the teacher's")
    p.add_argument("--hidden", type=_hidden_arg, default=None)
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--soft-out", default=None, help="also write the (transformed) soft labels here")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("eval", parents=[common], help="score a teacher/student pair")
    p.add_argument("--data", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--student", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common], help="run a grid sweep from a config")
    p.add_argument("--config", required=True, help="config path or shipped config name")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: $LEAKLAB_WORKERS or 1)")
    p.add_argument("--seeds", type=int, default=None, help="with --seed, run seeds seed..seed+N-1")
    p.add_argument("--alpha", type=float, nargs="+", default=None, help="replace the alpha grid")
    p.add_argument("--rho", type=float, nargs="+", default=None, help="replace the rho grid")
    p.add_argument("--tau", type=float, nargs="+", default=None, help="replace the tau grid")
    p.add_argument("--arch", choices=("linear", "mlp1", "mlp2"), default=None, help="teacher and student arch")
    p.add_argument("--transform", type=_transform_arg, default=None)
    p.add_argument("--mode", choices=MODES, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("thresholds", parents=[common], help="estimate threshold alphas from a store")
    p.add_argument("--store", required=True)
    p.add_argument("--name", choices=THRESHOLD_NAMES, action="append", default=None)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.set_defaults(func=cmd_thresholds)

    p = sub.add_parser("plot", parents=[common], help="write an SVG figure")
    p.add_argument("--kind", choices=("regime", "metric", "curve", "boundary"), default="regime")
    p.add_argument("--store", default=None)
    p.add_argument("--metric", default="acc_S_test")
    p.add_argument("--x", default="alpha")
    p.add_argument("--y", default="rho")
    p.add_argument("--rho", type=float, default=None, help="keep only cells with this rho")
    p.add_argument("--tau", type=float, default=None, help="keep only cells with this tau")
    p.add_argument("--alpha", type=float, default=None, help="keep only cells with this alpha")
    p.add_argument("--model", default=None, help="model JSON for --kind boundary")
    p.add_argument("--data", default=None, help="points to overlay for --kind boundary")
    p.add_argument("--bounds", type=float, nargs=4, default=[-3.0, 3.0, -3.0, 3.0])
    p.add_argument("--resolution", type=int, default=100)
    p.set_defaults(func=cmd_plot)
    return parser


# -- helpers ----------------------------------------------------------------

def _read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _emit_json(obj, out: Optional[str]):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def resolve_config(name: str) -> Path:
    """A config path, or the name of a config shipped with the package."""
    path = Path(name)
    if path.exists():
        return path
    stem = name if name.endswith(".json") else name + ".json"
    shipped = resources.files("leaklab") / "configs" / stem
    if shipped.is_file():
        return Path(str(shipped))
    raise FileNotFoundError(f"no config {name!r} (not a file, not a shipped config)")


def _load_data(path):
    obj = _read_json(path)
    dataset = dataset_from_dict(obj["dataset"] if "dataset" in obj else obj)
    part = partition_from_dict(obj["partition"]) if obj.get("partition") else None
    return dataset, part


def _seed(args) -> int:
    return 0 if args.seed is None else args.seed


# -- commands ---------------------------------------------------------------

def cmd_gen_data(args) -> int:
    rng = RngState(_seed(args))
    teacher_frac = args.teacher_frac
    if args.kind == "modular_addition":
        dataset = gen_modular_addition(args.p)
        teacher_frac = 0.3 if teacher_frac is None else teacher_frac
    else:
        if args.n is None and args.alpha is None:
            raise UsageError("gen-data needs --n or --alpha for this kind")
        d = 2 if args.kind == "toy2d" else args.d
        n = args.n if args.n is not None else round_half_up(args.alpha * d)
        if args.kind == "toy2d":
            dataset = gen_toy_2d(rng.child("data"), 2 * n, args.c)
            teacher_frac = 0.5 if teacher_frac is None else teacher_frac
        else:
            dataset = sample_random_dataset(rng.child("data"), n, d, args.c)
            teacher_frac = 1.0 if teacher_frac is None else teacher_frac
    out = {"dataset": dataset_to_dict(dataset), "partition": None}
    if args.rho is not None:
        part = make_partition(rng.child("partition"), dataset, teacher_frac, args.rho)
        out["partition"] = partition_to_dict(part)
    _emit_json(out, args.out)
    log.info("dataset %s: n=%d d=%d c=%d", dataset.kind, dataset.n, dataset.d, dataset.c)
    return 0


def cmd_train_teacher(args) -> int:
    dataset, part = _load_data(args.data)
    data = dataset.subset(part.teacher_idx) if part is not None else dataset
    config = TrainConfig(steps=args.steps, lr=args.lr, weight_decay=args.weight_decay, stop_loss=args.stop_loss)
    model, trace = train_teacher(RngState(_seed(args)).child("teacher"), data, args.arch, args.hidden, config)
    obj = model_to_dict(model)
    obj["trace"] = trace.records
    _emit_json(obj, args.out)
    log.info("teacher acc_T_star=%.4f after %d steps", trace.records[-1]["acc_T_star"], trace.records[-1]["step"])
    return 0


class _TransformView:
    def __init__(self, transform):
        self.transform = transform


def cmd_distill(args) -> int:
    dataset, part = _load_data(args.data)
    if part is None:
        raise UsageError("distill needs a dataset written with --rho (it carries the student split)")
    teacher = model_from_dict(_read_json(args.teacher))
    if args.mode == "pinv" and args.transform != "none":
        raise UsageError("--transform does not apply to --mode pinv")
    X, y = dataset.inputs, dataset.labels
    tr = part.student_train_idx
    rng = RngState(_seed(args)).child("student")
    if args.mode == "pinv":
        student = pinv_student(X[tr], forward_logits(teacher, X[tr]))
        trace = []
        soft = None
    else:
        if args.mode == "labels":
            soft = SoftLabelSet(one_hot(y[tr], dataset.c), 1.0, "labels")
        else:
            soft = make_soft_labels(teacher, X[tr], args.tau)
        soft, keep = _apply_transform(_TransformView(args.transform), soft, y[tr], rng)
        arch = args.arch or teacher.arch
        hidden = args.hidden if args.hidden is not None else list(teacher.widths[1:-1])
        config = TrainConfig(steps=args.steps, lr=args.lr, weight_decay=args.weight_decay)
        student, tr_trace = train_student(
            rng, X[tr][keep], soft.probs[keep], soft.tau, arch, hidden, config, labels=y[tr][keep]
        )
        trace = tr_trace.records
    if args.soft_out and soft is not None:
        _emit_json(soft_labels_to_dict(soft), args.soft_out)
    obj = model_to_dict(student)
    obj["trace"] = trace
    _emit_json(obj, args.out)
    return 0


def cmd_eval(args) -> int:
    dataset, part = _load_data(args.data)
    if part is None:
        raise UsageError("eval needs a dataset written with --rho")
    teacher = model_from_dict(_read_json(args.teacher))
    student = model_from_dict(_read_json(args.student))
    X, y = dataset.inputs, dataset.labels
    tr, te = part.student_train_idx, part.student_test_idx
    X_val, y_val = part.val_data(dataset)
    Zs = {k: forward_logits(student, X[idx]) for k, idx in (("train", tr), ("test", te))}
    Zt = {k: forward_logits(teacher, X[idx]) for k, idx in (("train", tr), ("test", te))}
    center = student.meta.get("mode") != "pinv"
    record = MetricsRecord(
        acc_T_star=accuracy_from_logits(forward_logits(teacher, X[part.teacher_idx]), y[part.teacher_idx]),
        acc_S_train=accuracy_from_logits(Zs["train"], y[tr]),
        acc_S_test=accuracy_from_logits(Zs["test"], y[te]),
        acc_T_val=accuracy_from_logits(forward_logits(teacher, X_val), y_val),
        acc_S_val=accuracy_from_logits(forward_logits(student, X_val), y_val),
        acc_S_match_T=accuracy_from_logits(Zs["test"], Zt["test"].argmax(axis=1)),
        mse_train=mse_from_logits(Zs["train"], Zt["train"], center),
        mse_test=mse_from_logits(Zs["test"], Zt["test"], center),
    )
    regime = classify_regime(record, Cutoffs.for_classes(dataset.c))
    _emit_json({"metrics": record.to_dict(), "regime": regime.label}, args.out)
    return 0


def cmd_sweep(args) -> int:
    obj = _read_json(resolve_config(args.config))
    if args.seed is not None:
        obj["seeds"] = list(range(args.seed, args.seed + (args.seeds or 1)))
    elif args.seeds is not None:
        obj["seeds"] = list(range(args.seeds))
    for flag, key in (("alpha", "alpha_grid"), ("rho", "rho_grid"), ("tau", "tau_grid")):
        if getattr(args, flag) is not None:
            obj[key] = getattr(args, flag)
    if args.transform is not None:
        obj["transform"] = args.transform
    for role in ("teacher", "student"):
        obj.setdefault(role, {})
    if args.arch is not None:
        obj["teacher"]["arch"] = obj["student"]["arch"] = args.arch
    if args.mode is not None:
        obj["student"]["mode"] = args.mode
    config = SweepConfig.from_dict(obj)
    out = args.out or config.output_dir

    def progress(cell, done):
        log.info("[%d] alpha=%s rho=%g tau=%g seed=%d %s", done, cell.alpha, cell.rho, cell.tau, cell.seed,
                 cell.regime.label if cell.regime else cell.status)

    store = run_sweep(config, out, workers=args.workers, deterministic=args.deterministic, progress=progress)
    failed = len(store.select(status="failed"))
    print(f"{len(store)} cells in {out}/cells.csv ({failed} failed)")
    return 0


def cmd_thresholds(args) -> int:
    store = ResultStore.open(args.store)
    cells = list(store)
    transform = {c.transform for c in cells}
    names = args.name or [n for n in THRESHOLD_NAMES if (n == "alpha_S_shuffle_label") == (transform == {"shuffle"})]
    cutoffs = None
    manifest = store.manifest()
    if manifest.get("config", {}).get("cutoffs") and cells:
        cutoffs = Cutoffs.for_classes(cells[0].c, **manifest["config"]["cutoffs"])
    results = []
    for name in names:
        est = store_threshold(cells, name, args.rho, args.tau, cutoffs)
        results.append({
            "name": est.name,
            "alpha_star": est.alpha_star,
            "stderr": None if np.isnan(est.stderr) else est.stderr,
            "crossed": est.crossed,
            "n_seeds": est.n_seeds,
            "n_crossed": est.n_crossed,
            "rho": est.rho,
            "tau": est.tau,
            "criterion": est.criterion,
        })
        se = "n/a" if np.isnan(est.stderr) else f"{est.stderr:.4f}"
        flag = "" if est.crossed else " (no crossing in the swept range)"
        print(f"{est.name}: {est.alpha_star:.4f} +/- {se} [{est.n_crossed}/{est.n_seeds} seeds]{flag}", file=sys.stderr)
    _emit_json(results, args.out)
    return 0


def cmd_plot(args) -> int:
    out = args.out or f"{args.kind}.svg"
    if args.kind == "boundary":
        if not args.model:
            raise UsageError("--kind boundary needs --model")
        model = model_from_dict(_read_json(args.model))
        data = None
        if args.data:
            dataset, _ = _load_data(args.data)
            data = (dataset.inputs, dataset.labels)
        emit_decision_boundary(model, tuple(args.bounds), args.resolution, out, data, deterministic=args.deterministic)
    else:
        if not args.store:
            raise UsageError(f"--kind {args.kind} needs --store")
        store = ResultStore.open(args.store)
        filters = {"rho": args.rho, "tau": args.tau, "alpha": args.alpha}
        if args.kind == "curve":
            filters = {k: v for k, v in filters.items() if k != args.x}
            metrics = args.metric.split(",") if args.metric != "acc_S_test" else (
                "acc_T_star", "acc_S_train", "acc_S_test", "acc_S_val")
            emit_curves(store, metrics, args.x, out, filters, deterministic=args.deterministic)
        else:
            filters = {k: v for k, v in filters.items() if k not in (args.x, args.y)}
            value = "regime" if args.kind == "regime" else args.metric
            emit_heatmap(store, value, args.x, args.y, out, filters, deterministic=args.deterministic)
    print(out)
    return 0


def _report(exc: BaseException, code: int, json_errors: bool):
    if json_errors:
        payload = {"error": type(exc).__name__, "message": str(exc).strip(), "exit_code": code}
        print(json.dumps(payload), file=sys.stderr)
    else:
        print(f"error: {str(exc).strip()}" if code == 2 else str(exc).rstrip(), file=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    json_errors = "--json-errors" in argv
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        _report(exc, 1, json_errors)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        _report(exc, 1, args.json_errors)
        return 1
    except (LeaklabError, ValueError, OSError, KeyError, np.linalg.LinAlgError) as exc:
        _report(exc, 2, args.json_errors)
        return 2


if __name__ == "__main__":
    sys.exit(main())
