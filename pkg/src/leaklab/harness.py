"""Config-driven sweeps over (alpha, rho, tau, seed) grids.

A sweep expands its grids into cells. Each cell draws its data, trains (or
reuses) a teacher, distils a student and scores the result. Results go to a
``ResultStore``: an append-only ``cells.csv`` plus ``manifest.json`` and
optional per-cell trace files.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import __version__
from .data import (
    Dataset,
    gen_modular_addition,
    gen_toy_2d,
    make_partition,
    round_half_up,
    sample_random_dataset,
)
from .distill import (
    SoftLabelSet,
    TrainConfig,
    Trace,
    ablate_smallest_k,
    default_student_steps,
    make_soft_labels,
    one_hot,
    pinv_student,
    shuffle_within_class,
    train_student,
    train_teacher,
    zero_class_column,
)
from .errors import DuplicateCell, LeaklabError
from .metrics import (
    METRIC_FIELDS,
    Cutoffs,
    MetricsRecord,
    Regime,
    ThresholdEstimate,
    accuracy_from_logits,
    classify_regime,
    combine_estimates,
    estimate_threshold,
    mse_from_logits,
)
from .models import Model, forward_logits
from .numkit import RngState
from .plotting import emit_curves, emit_decision_boundary, emit_heatmap, raster_classes  # noqa: F401

log = logging.getLogger(__name__)

WORKERS_ENV = "LEAKLAB_WORKERS"
ALPHA_CONVENTIONS = ("n/d", "n/(dc)")
MODES = ("ce", "pinv", "labels")


def parse_transform(spec: str) -> tuple[str, Optional[int]]:
    """``none``, ``shuffle``, ``topk:K``, ``dropclass:C`` or ``zerocol:C``."""
    spec = (spec or "none").strip()
    if spec in ("none", "shuffle"):
        return spec, None
    kind, _, arg = spec.partition(":")
    if kind in ("topk", "dropclass", "zerocol") and arg.lstrip("-").isdigit():
        return kind, int(arg)
    raise ValueError(f"unknown transform {spec!r}")


@dataclass
class ModelSpec:
    arch: str = "linear"
    hidden: list = field(default_factory=list)
    bias: Optional[bool] = None
    train: TrainConfig = field(default_factory=TrainConfig)
    mode: str = "ce"  # students only
    init: str = "random"  # students only: "random" or "teacher"

    @classmethod
    def from_dict(cls, obj: Optional[dict], default_train: Optional[dict] = None) -> "ModelSpec":
        obj = dict(obj or {})
        train = TrainConfig.from_dict({**(default_train or {}), **(obj.pop("train", None) or {})})
        spec = cls(train=train, **obj)
        if spec.mode not in MODES:
            raise ValueError(f"student mode must be one of {MODES}")
        return spec

    def to_dict(self) -> dict:
        out = asdict(self)
        out["train"] = self.train.to_dict()
        return out


@dataclass
class SweepConfig:
    """One sweep. See the README for the JSON schema and its defaults."""

    name: str = "sweep"
    dataset: dict = field(default_factory=lambda: {"kind": "random_iid", "d": 200, "c": 2})
    alpha_convention: str = "n/d"
    alpha_grid: list = field(default_factory=lambda: [1.0])
    rho_grid: list = field(default_factory=lambda: [0.8])
    tau_grid: list = field(default_factory=lambda: [1.0])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    d_overrides: dict = field(default_factory=dict)
    teacher: ModelSpec = field(default_factory=lambda: ModelSpec(train=TrainConfig(steps=10_000, stop_loss=1e-2)))
    student: ModelSpec = field(default_factory=lambda: ModelSpec(mode="pinv", train=TrainConfig(steps=5000)))
    transform: str = "none"
    focus_class: int = 0
    cutoffs: dict = field(default_factory=dict)
    record_traces: bool = False
    rank_tol: float = 1e-10
    output_dir: str = "out"

    def __post_init__(self):
        if self.alpha_convention not in ALPHA_CONVENTIONS:
            raise ValueError(f"alpha_convention must be one of {ALPHA_CONVENTIONS}")
        kind = self.dataset.get("kind", "random_iid")
        fixed_n = kind == "modular_addition" or self.dataset.get("n") is not None
        if not fixed_n and not self.alpha_grid:
            raise ValueError("alpha_grid must be nonempty")
        if not self.rho_grid or not self.tau_grid or not self.seeds:
            raise ValueError("rho_grid, tau_grid and seeds must be nonempty")
        if any(a <= 0 for a in self.alpha_grid or []) or any(t <= 0 for t in self.tau_grid):
            raise ValueError("alpha and tau values must be positive")
        if any(not 0 < r < 1 for r in self.rho_grid):
            raise ValueError("rho values must lie in (0, 1)")
        parse_transform(self.transform)
        if self.student.mode == "pinv" and self.transform != "none":
            raise ValueError("pinv students regress raw logits; soft-label transforms do not apply")

    @classmethod
    def from_dict(cls, obj: dict) -> "SweepConfig":
        obj = dict(obj)
        obj.pop("$schema", None)
        obj.pop("description", None)
        teacher = ModelSpec.from_dict(obj.pop("teacher", None), {"steps": 10_000, "stop_loss": 1e-2})
        student_obj = obj.pop("student", None) or {}
        steps = default_student_steps(student_obj.get("arch", "linear"))
        student = ModelSpec.from_dict(student_obj, {"steps": steps})
        obj.setdefault("alpha_grid", [1.0])
        return cls(teacher=teacher, student=student, **obj)

    @classmethod
    def load(cls, path) -> "SweepConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["teacher"] = self.teacher.to_dict()
        out["student"] = self.student.to_dict()
        return out

    def experiment_dict(self) -> dict:
        """Everything that affects a cell's numbers (grids and paths excluded)."""
        out = self.to_dict()
        for key in ("name", "alpha_grid", "rho_grid", "tau_grid", "seeds", "output_dir", "record_traces"):
            out.pop(key)
        return out

    def config_hash(self) -> str:
        """Hash of the settings that change results; extending a grid keeps it."""
        return _hash(self.experiment_dict())

    def cutoffs_for(self, c: int) -> Cutoffs:
        return Cutoffs.for_classes(c, **self.cutoffs)

    def coords(self) -> list[tuple[float, float, float, int]]:
        alphas = self.alpha_grid if self._alpha_free() else [None]
        return [
            (a, r, t, s)
            for s, a, r, t in product(self.seeds, alphas, self.rho_grid, self.tau_grid)
        ]

    def _alpha_free(self) -> bool:
        return self.dataset.get("kind", "random_iid") != "modular_addition" and self.dataset.get("n") is None


def _hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def cell_key(config: SweepConfig, coords) -> str:
    alpha, rho, tau, seed = coords
    return _hash({"exp": config.experiment_dict(), "alpha": alpha, "rho": rho, "tau": tau, "seed": seed})


@dataclass
class CellResult:
    key: str
    alpha: float
    rho: float
    tau: float
    seed: int
    n: int = 0
    d: int = 0
    c: int = 0
    n_train: int = 0
    mode: str = ""
    transform: str = "none"
    status: str = "ok"
    error: str = ""
    metrics: Optional[MetricsRecord] = None
    regime: Optional[Regime] = None
    acc_S_test_focus: float = float("nan")
    acc_S_test_rest: float = float("nan")
    data_hash: str = ""
    duration: float = 0.0
    traces: Optional[dict] = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def row(self) -> dict:
        row = {
            "key": self.key,
            "status": self.status,
            "alpha": self.alpha,
            "rho": self.rho,
            "tau": self.tau,
            "seed": self.seed,
            "n": self.n,
            "d": self.d,
            "c": self.c,
            "n_train": self.n_train,
            "mode": self.mode,
            "transform": self.transform,
        }
        for name in METRIC_FIELDS:
            row[name] = getattr(self.metrics, name) if self.metrics else float("nan")
        row.update(
            regime=self.regime.value if self.regime else "",
            acc_S_test_focus=self.acc_S_test_focus,
            acc_S_test_rest=self.acc_S_test_rest,
            data_hash=self.data_hash,
            duration=self.duration,
            error=self.error,
        )
        return row


CSV_COLUMNS = list(CellResult("", 0, 0, 0, 0).row().keys())
_INT_COLUMNS = {"seed", "n", "d", "c", "n_train"}
_FLOAT_COLUMNS = {"alpha", "rho", "tau", "duration", "acc_S_test_focus", "acc_S_test_rest", *METRIC_FIELDS}


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _parse_row(row: dict) -> CellResult:
    vals = {}
    for k, v in row.items():
        if k in _INT_COLUMNS:
            vals[k] = int(v)
        elif k in _FLOAT_COLUMNS:
            vals[k] = float(v)
        else:
            vals[k] = v
    metrics = None
    if vals["status"] == "ok":
        metrics = MetricsRecord(**{name: vals[name] for name in METRIC_FIELDS})
    return CellResult(
        key=vals["key"], alpha=vals["alpha"], rho=vals["rho"], tau=vals["tau"], seed=vals["seed"],
        n=vals["n"], d=vals["d"], c=vals["c"], n_train=vals["n_train"], mode=vals["mode"],
        transform=vals["transform"], status=vals["status"], error=vals["error"], metrics=metrics,
        regime=Regime(vals["regime"]) if vals["regime"] else None,
        acc_S_test_focus=vals["acc_S_test_focus"], acc_S_test_rest=vals["acc_S_test_rest"],
        data_hash=vals["data_hash"], duration=vals["duration"],
    )


# -- running one cell -------------------------------------------------------

def _resolve_sizes(config: SweepConfig, alpha) -> tuple[Optional[float], int, int, int]:
    ds = config.dataset
    kind = ds.get("kind", "random_iid")
    c = int(ds.get("c", 2))
    if kind == "modular_addition":
        p = int(ds["p"])
        return None, p * p, 3 * p, p
    d = 2 if kind == "toy2d" else int(ds.get("d", 1))
    if alpha is not None:
        for key, value in config.d_overrides.items():
            if math.isclose(float(key), alpha):
                d = int(value)
    if ds.get("n") is not None:
        return None, int(ds["n"]), d, c
    scale = d if config.alpha_convention == "n/d" else d * c
    return alpha, round_half_up(alpha * scale), d, c


def alpha_of(config: SweepConfig, n: int, d: int, c: int) -> float:
    return n / d if config.alpha_convention == "n/d" else n / (d * c)


def _make_dataset(config: SweepConfig, base: RngState, n: int, d: int, c: int) -> tuple[Dataset, float]:
    kind = config.dataset.get("kind", "random_iid")
    if kind == "random_iid":
        return sample_random_dataset(base.child("data", kind, n, d, c), n, d, c), 1.0
    if kind == "toy2d":
        # teacher gets the first half of a 2n draw; the other half validates
        return gen_toy_2d(base.child("data", kind, n, c), 2 * n, c), 0.5
    return gen_modular_addition(int(config.dataset["p"])), float(config.dataset.get("teacher_frac", 0.3))


def _teacher_key(config: SweepConfig, seed: int, data_hash: str, teacher_idx: np.ndarray) -> str:
    return _hash({
        "teacher": config.teacher.to_dict(),
        "seed": seed,
        "data": data_hash,
        "idx": hashlib.sha256(teacher_idx.tobytes()).hexdigest()[:16],
    })


def _apply_transform(config, soft_train, train_labels, rng: RngState):
    kind, arg = parse_transform(config.transform)
    keep = np.ones(len(train_labels), dtype=bool)
    if kind == "shuffle":
        soft_train = shuffle_within_class(rng.child("shuffle"), soft_train, train_labels)
    elif kind == "topk":
        soft_train = ablate_smallest_k(soft_train, arg)
    elif kind == "zerocol":
        soft_train = zero_class_column(soft_train, arg, train_labels)
    elif kind == "dropclass":
        keep = train_labels != arg
    return soft_train, keep


def run_cell(config: SweepConfig, coords, seed: Optional[int] = None, cache: Optional[dict] = None) -> CellResult:
    """Run one grid cell end to end.

    ``coords`` is ``(alpha, rho, tau)`` or ``(alpha, rho, tau, seed)``.
    Errors inside the pipeline produce a cell with ``status="failed"`` rather
    than propagating. ``cache`` (a dict) lets cells that share data and
    teacher settings reuse one trained teacher.
    """
    if seed is None:
        alpha, rho, tau, seed = coords
    else:
        alpha, rho, tau = coords[:3]
    t0 = time.perf_counter()
    alpha_in, n, d, c = _resolve_sizes(config, alpha)
    key = cell_key(config, (alpha, rho, tau, seed))
    result = CellResult(
        key, float(alpha if alpha is not None else float("nan")), float(rho), float(tau), int(seed),
        mode=config.student.mode, transform=config.transform,
    )
    try:
        _run_cell_inner(config, result, n, d, c, cache)
    except (LeaklabError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        result.status = "failed"
        result.error = f"{type(exc).__name__}: {exc}"
        result.metrics = None
        result.regime = None
        log.warning("cell %s failed: %s", key, result.error)
    result.duration = time.perf_counter() - t0
    return result


def _run_cell_inner(config: SweepConfig, result: CellResult, n, d, c, cache):
    base = RngState(result.seed)
    rho, tau = result.rho, result.tau
    dataset, teacher_frac = _make_dataset(config, base, n, d, c)
    part = make_partition(base.child("partition", dataset.n, d, rho), dataset, teacher_frac, rho)
    n_teacher = part.teacher_idx.size
    result.n, result.d, result.c = n_teacher, dataset.d, dataset.c
    result.n_train = part.student_train_idx.size
    if math.isnan(result.alpha):
        result.alpha = alpha_of(config, n_teacher, dataset.d, dataset.c)
    result.data_hash = dataset.digest()

    X_val, y_val = part.val_data(dataset)
    tkey = _teacher_key(config, result.seed, result.data_hash, part.teacher_idx)
    if cache is not None and tkey in cache:
        teacher, teacher_trace = cache[tkey]
    else:
        tspec = config.teacher
        teacher, teacher_trace = train_teacher(
            base.child("teacher", n_teacher, dataset.d),
            dataset.subset(part.teacher_idx),
            tspec.arch,
            tspec.hidden,
            tspec.train,
            bias=tspec.bias,
            eval_sets={"T_val": (X_val, y_val)} if config.record_traces else None,
        )
        if cache is not None:
            cache[tkey] = (teacher, teacher_trace)

    X, y = dataset.inputs, dataset.labels
    tr, te = part.student_train_idx, part.student_test_idx
    Z_teacher = forward_logits(teacher, X[part.teacher_idx])
    acc_T_star = accuracy_from_logits(Z_teacher, y[part.teacher_idx])
    Zt_val = forward_logits(teacher, X_val)
    acc_T_val = accuracy_from_logits(Zt_val, y_val)

    sspec = config.student
    student_trace: Optional[Trace] = None
    srng = base.child("student", n_teacher, dataset.d, rho, tau)
    if sspec.mode == "pinv":
        student = pinv_student(X[tr], forward_logits(teacher, X[tr]), config.rank_tol)
    else:
        if sspec.mode == "labels":
            targets_all = one_hot(y, dataset.c)
            train_tau = 1.0
        else:
            targets_all = make_soft_labels(teacher, X, tau).probs
            train_tau = tau
        soft_train = SoftLabelSet(targets_all[tr], train_tau)
        soft_train, keep = _apply_transform(config, soft_train, y[tr], srng)
        if not keep.any():
            raise ValueError("transform removed every training sample")
        eval_sets = None
        if config.record_traces:
            eval_sets = {
                "S_train": (X[tr], y[tr], soft_train.probs if keep.all() else None),
                "S_test": (X[te], y[te], targets_all[te]),
                "S_val": (X_val, y_val),
            }
        student, student_trace = train_student(
            srng,
            X[tr][keep],
            soft_train.probs[keep],
            train_tau,
            sspec.arch,
            sspec.hidden,
            sspec.train,
            labels=y[tr][keep],
            eval_sets=eval_sets,
            init=teacher if sspec.init == "teacher" else None,
            bias=sspec.bias,
        )

    Zs_train, Zs_test = forward_logits(student, X[tr]), forward_logits(student, X[te])
    Zt_train, Zt_test = forward_logits(teacher, X[tr]), forward_logits(teacher, X[te])
    center = sspec.mode != "pinv"
    record = MetricsRecord(
        acc_T_star=acc_T_star,
        acc_S_train=accuracy_from_logits(Zs_train, y[tr]),
        acc_S_test=accuracy_from_logits(Zs_test, y[te]),
        acc_T_val=acc_T_val,
        acc_S_val=accuracy_from_logits(forward_logits(student, X_val), y_val),
        acc_S_match_T=accuracy_from_logits(Zs_test, Zt_test.argmax(axis=1)),
        mse_train=mse_from_logits(Zs_train, Zt_train, center),
        mse_test=mse_from_logits(Zs_test, Zt_test, center),
    )
    result.metrics = record
    result.regime = classify_regime(record, config.cutoffs_for(dataset.c))
    focus = y[te] == config.focus_class
    hits = Zs_test.argmax(axis=1) == y[te]
    if focus.any():
        result.acc_S_test_focus = float(hits[focus].mean())
    if (~focus).any():
        result.acc_S_test_rest = float(hits[~focus].mean())
    if config.record_traces:
        result.traces = {
            "teacher": teacher_trace.records,
            "student": student_trace.records if student_trace is not None else [],
        }


# -- the store --------------------------------------------------------------

class ResultStore:
    """Append-only results directory: ``cells.csv``, ``manifest.json``, ``traces/``."""

    def __init__(self, path, deterministic: bool = False):
        self.path = Path(path)
        self.deterministic = deterministic
        self.cells: dict[str, CellResult] = {}
        if self.csv_path.exists():
            self._load()

    @property
    def csv_path(self) -> Path:
        return self.path / "cells.csv"

    @property
    def manifest_path(self) -> Path:
        return self.path / "manifest.json"

    def _load(self):
        with open(self.csv_path, newline="") as fh:
            for row in csv.DictReader(fh):
                cell = _parse_row(row)
                self.cells[cell.key] = cell

    @classmethod
    def open(cls, path) -> "ResultStore":
        store = cls(path)
        if not store.csv_path.exists():
            raise FileNotFoundError(f"no cells.csv under {path}")
        return store

    def __len__(self) -> int:
        return len(self.cells)

    def __contains__(self, key: str) -> bool:
        return key in self.cells

    def __iter__(self):
        return iter(self.cells.values())

    def manifest(self) -> dict:
        if not self.manifest_path.exists():
            return {}
        with open(self.manifest_path) as fh:
            return json.load(fh)

    def write_manifest(self, config: SweepConfig):
        manifest = {
            "format": "leaklab.manifest/1",
            "name": config.name,
            "config_hash": config.config_hash(),
            "code_version": __version__,
            "config": config.to_dict(),
            "alpha_convention": config.alpha_convention,
            "init_scheme": "normal_fan_in",
            "weak_cutoff_rule": "0.55 for c=2, 1/c + 0.05 above",
            "threshold_reduction": "per-seed crossing, then mean and standard error",
            "mse_centering": "per-sample mean removed for ce/labels students",
        }
        if not self.deterministic:
            manifest["created"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        old = self.manifest()
        if old and old.get("config_hash") != manifest["config_hash"] and self.cells:
            raise DuplicateCell("store holds results from a different config; use a fresh output dir")
        self.path.mkdir(parents=True, exist_ok=True)
        with open(self.manifest_path, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def append(self, cell: CellResult):
        """Add a cell; a repeated key is a no-op if the payload matches."""
        if self.deterministic:
            cell.duration = 0.0
        row = {k: _fmt(v) for k, v in cell.row().items()}
        if cell.key in self.cells:
            old = {k: _fmt(v) for k, v in self.cells[cell.key].row().items()}
            old.pop("duration"), row.pop("duration")
            if old != row:
                raise DuplicateCell(f"cell {cell.key} already stored with different results")
            return
        self.path.mkdir(parents=True, exist_ok=True)
        new_file = not self.csv_path.exists()
        with open(self.csv_path, "a", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
            if new_file:
                writer.writeheader()
            writer.writerow(row)
            fh.flush()
        if cell.traces is not None:
            tdir = self.path / "traces"
            tdir.mkdir(exist_ok=True)
            with open(tdir / f"{cell.key}.json", "w") as fh:
                json.dump(cell.traces, fh, sort_keys=True)
        self.cells[cell.key] = _parse_row({k: _fmt(v) for k, v in cell.row().items()})

    def trace(self, key: str) -> Optional[dict]:
        path = self.path / "traces" / f"{key}.json"
        if not path.exists():
            return None
        with open(path) as fh:
            return json.load(fh)

    def select(self, status: str = "ok", **filters) -> list[CellResult]:
        out = []
        for cell in self.cells.values():
            if status and cell.status != status:
                continue
            if all(v is None or math.isclose(getattr(cell, k), v) for k, v in filters.items()):
                out.append(cell)
        return out


# -- sweeps -----------------------------------------------------------------

def _run_group(config_dict: dict, group: list) -> list[CellResult]:
    config = SweepConfig.from_dict(config_dict)
    cache: dict = {}
    return [run_cell(config, coords, cache=cache) for coords in group]


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_sweep(
    config: SweepConfig,
    out_dir=None,
    workers: Optional[int] = None,
    deterministic: bool = False,
    progress=None,
) -> ResultStore:
    """Run every grid cell not already in the store at ``out_dir``.

    Cells sharing a seed and alpha run in one task so the teacher is trained
    once. With ``workers > 1`` tasks go to a process pool; results are always
    written by this process. Failed cells are recorded and the sweep goes on.
    """
    store = ResultStore(out_dir or config.output_dir, deterministic=deterministic)
    store.write_manifest(config)
    groups: dict[tuple, list] = {}
    for coords in config.coords():
        if cell_key(config, coords) in store:
            continue
        groups.setdefault((coords[3], coords[0]), []).append(coords)
    tasks = list(groups.values())
    workers = workers or default_workers()
    done = 0

    def collect(results):
        nonlocal done
        for cell in results:
            store.append(cell)
            done += 1
            if progress:
                progress(cell, done)

    if workers <= 1 or len(tasks) <= 1:
        for group in tasks:
            collect(_run_group(config.to_dict(), group))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_group, config.to_dict(), g) for g in tasks]
            for fut in futures:
                collect(fut.result())
    return store


# -- thresholds from a store ------------------------------------------------

_THRESHOLD_METRICS = {
    "alpha_T_label": ("acc_T_star", "memorize"),
    "alpha_S_label": ("acc_S_train", "memorize"),
    "alpha_S_id": ("mse_test", "mse"),
    "alpha_S_shuffle_label": ("acc_S_train", "memorize"),
}


def store_threshold(
    cells: Iterable[CellResult],
    name: str,
    rho: Optional[float] = None,
    tau: Optional[float] = None,
    cutoffs: Optional[Cutoffs] = None,
) -> ThresholdEstimate:
    """Per-seed falling crossing for a named threshold, combined across seeds.

    The id threshold uses the logit MSE on the student test set against the
    ``mse`` cutoff; the label thresholds use teacher or student training
    accuracy against the ``memorize`` cutoff.
    """
    if name not in _THRESHOLD_METRICS:
        raise ValueError(f"unknown threshold {name!r}")
    metric, which = _THRESHOLD_METRICS[name]
    cells = [
        cell for cell in cells
        if cell.ok
        and (rho is None or math.isclose(cell.rho, rho))
        and (tau is None or math.isclose(cell.tau, tau))
    ]
    if not cells:
        raise ValueError("no successful cells match the requested rho/tau")
    if name == "alpha_S_shuffle_label" and any(c.transform != "shuffle" for c in cells):
        raise ValueError("alpha_S_shuffle_label needs a store swept with transform 'shuffle'")
    if cutoffs is None:
        cutoffs = Cutoffs.for_classes(cells[0].c)
    cutoff = getattr(cutoffs, which)
    rhos = sorted({c.rho for c in cells})
    taus = sorted({c.tau for c in cells})
    if name != "alpha_T_label" and (len(rhos) > 1 or len(taus) > 1):
        raise ValueError(f"store has several rho/tau values {rhos}/{taus}; pass rho and tau")
    per_seed = []
    for seed in sorted({c.seed for c in cells}):
        by_alpha: dict[float, list[float]] = {}
        for cell in cells:
            if cell.seed == seed:
                by_alpha.setdefault(cell.alpha, []).append(getattr(cell.metrics, metric))
        if len(by_alpha) < 2:
            continue
        curve = [(a, float(np.mean(v))) for a, v in sorted(by_alpha.items())]
        per_seed.append(estimate_threshold(curve, cutoff, "falling", name, rho or rhos[0], tau or taus[0]))
    if not per_seed:
        raise ValueError("need at least two alpha values per seed")
    return combine_estimates(per_seed)


def seed_average(cells: Iterable[CellResult], x: str = "alpha", y: str = "rho") -> dict:
    """Mean MetricsRecord per (x, y) pair over all matching successful cells."""
    buckets: dict[tuple, list[CellResult]] = {}
    for cell in cells:
        if cell.ok:
            buckets.setdefault((getattr(cell, x), getattr(cell, y)), []).append(cell)
    out = {}
    for coord, group in buckets.items():
        mean = {name: float(np.mean([getattr(c.metrics, name) for c in group])) for name in METRIC_FIELDS}
        out[coord] = (MetricsRecord(**mean), group)
    return out
