"""Soft labels, their controls and ablations, and teacher/student training."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .data import Dataset, decode_array, encode_array
from .errors import DivergedTraining, NumericalFailure, ShapeMismatch
from .models import (
    AdamState,
    Layer,
    Model,
    _backward,
    _forward,
    adam_step,
    forward_logits,
    init_params,
)
from .numkit import RngLike, as_generator, least_squares_min_norm


@dataclass
class SoftLabelSet:
    probs: np.ndarray
    tau: float
    transform: str = "none"

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    def rows(self, idx) -> "SoftLabelSet":
        return SoftLabelSet(self.probs[np.asarray(idx, dtype=np.int64)], self.tau, self.transform)


def softmax_with_temperature(z: np.ndarray, tau: float) -> np.ndarray:
    """``exp(z / tau)`` normalised along the last axis, with max subtraction."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    z = np.asarray(z, dtype=np.float64)
    with np.errstate(over="ignore"):  # z - max(z) may overflow to -inf, which exp maps to 0
        s = (z - z.max(axis=-1, keepdims=True)) / tau
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def make_soft_labels(teacher: Model, X: np.ndarray, tau: float) -> SoftLabelSet:
    return SoftLabelSet(softmax_with_temperature(forward_logits(teacher, X), tau), float(tau))


def one_hot(labels: np.ndarray, c: int) -> np.ndarray:
    out = np.zeros((len(labels), c))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def shuffle_within_class(rng: RngLike, soft: SoftLabelSet, labels: np.ndarray) -> SoftLabelSet:
    """Reassign soft-label rows among samples that share a ground-truth class.

    Each class block gets an independent uniform permutation, so the result
    keeps class identity but drops the link between a row and its own input.
    """
    g = as_generator(rng)
    labels = np.asarray(labels)
    if labels.shape != (soft.n,):
        raise ShapeMismatch("labels must have one entry per soft-label row")
    order = np.arange(soft.n)
    for k in np.unique(labels):
        members = np.flatnonzero(labels == k)
        order[members] = members[g.permutation(members.size)]
    return SoftLabelSet(soft.probs[order], soft.tau, "shuffled_within_class")


def ablate_smallest_k(soft: SoftLabelSet, k: int) -> SoftLabelSet:
    """Zero the ``k`` smallest entries of every row; no renormalisation.

    Ties go to the lower class index (a stable sort puts it first).
    """
    c = soft.probs.shape[1]
    if not 0 <= k < c:
        raise ValueError(f"k must lie in [0, {c}), got {k}")
    probs = soft.probs.copy()
    if k:
        smallest = np.argsort(probs, axis=1, kind="stable")[:, :k]
        np.put_along_axis(probs, smallest, 0.0, axis=1)
    return SoftLabelSet(probs, soft.tau, f"smallest_k_zeroed({k})")


def zero_class_column(soft: SoftLabelSet, cls: int, labels: np.ndarray) -> SoftLabelSet:
    """Zero entry ``cls`` in every row whose true label is not ``cls``."""
    c = soft.probs.shape[1]
    if not 0 <= cls < c:
        raise ValueError(f"class must lie in [0, {c})")
    probs = soft.probs.copy()
    probs[np.asarray(labels) != cls, cls] = 0.0
    return SoftLabelSet(probs, soft.tau, f"class_column_zeroed({cls})")


def soft_labels_to_dict(soft: SoftLabelSet) -> dict:
    return {
        "format": "leaklab.softlabels/1",
        "shape": list(soft.probs.shape),
        "tau": soft.tau,
        "transform": soft.transform,
        "probs": encode_array(soft.probs),
    }


def soft_labels_from_dict(obj: dict) -> SoftLabelSet:
    return SoftLabelSet(decode_array(obj["probs"], obj["shape"]), float(obj["tau"]), obj["transform"])


# -- training ---------------------------------------------------------------

@dataclass
class TrainConfig:
    """Full-batch Adam settings.

    ``stop_loss`` ends training once the mean loss falls below it (teachers
    additionally require perfect training accuracy). ``stop_excess`` ends
    training once the mean excess cross-entropy over its attainable minimum
    drops below the given value.
    """

    steps: int = 10_000
    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    record_every: int = 100
    stop_loss: Optional[float] = None
    stop_excess: Optional[float] = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")

    @classmethod
    def from_dict(cls, obj: Optional[dict]) -> "TrainConfig":
        return cls(**(obj or {}))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Trace:
    """Per-step records; every record has ``step`` and ``loss`` (mean CE)."""

    records: list[dict] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([r.get(name, np.nan) for r in self.records], dtype=np.float64)

    @property
    def steps(self) -> np.ndarray:
        return self.column("step")

    def __len__(self) -> int:
        return len(self.records)


EvalSets = dict  # name -> (X, labels) or (X, labels, targets)


def _evaluate(model: Model, eval_sets: Optional[EvalSets], tau: float) -> dict:
    out = {}
    for name, entry in (eval_sets or {}).items():
        X, labels = entry[0], entry[1]
        if len(X) == 0:
            continue
        Z = _forward(model, X)[0]
        out[f"acc_{name}"] = float(np.mean(Z.argmax(axis=1) == labels))
        if len(entry) > 2 and entry[2] is not None:
            targets = entry[2]
            S = Z / tau
            S = S - S.max(axis=1, keepdims=True)
            logp = S - np.log(np.exp(S).sum(axis=1, keepdims=True))
            out[f"ce_{name}"] = float(-(targets * logp).sum() / len(X))
    return out


def _min_ce(targets: np.ndarray) -> float:
    S = targets.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(targets > 0, targets * np.log(targets / S), 0.0)
    return float(-terms.sum())


def fit(
    model: Model,
    X: np.ndarray,
    targets: np.ndarray,
    tau: float,
    config: TrainConfig,
    labels: Optional[np.ndarray] = None,
    eval_sets: Optional[EvalSets] = None,
    require_fit: bool = False,
    callback: Optional[Callable[[int, Model], None]] = None,
) -> Trace:
    """Minimise the temperature cross-entropy with full-batch Adam, in place.

    ``labels`` are used for the running training accuracy (``acc_fit``);
    when ``require_fit`` is set, ``stop_loss`` only triggers once that
    accuracy is 1.

    Raises:
        DivergedTraining: if the loss becomes non-finite.
    """
    X = np.asarray(X, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n = X.shape[0]
    if targets.shape != (n, model.c):
        raise ShapeMismatch(f"targets must have shape {(n, model.c)}, got {targets.shape}")
    state = AdamState.for_model(
        model,
        lr=config.lr,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.eps,
        weight_decay=config.weight_decay,
    )
    floor = _min_ce(targets) / n if config.stop_excess is not None else 0.0
    trace = Trace()

    def record(step, loss, acc):
        rec = {"step": step, "loss": loss}
        if acc is not None:
            rec["acc_fit"] = acc
        rec.update(_evaluate(model, eval_sets, tau))
        trace.records.append(rec)

    for step in range(config.steps + 1):
        Z, acts = _forward(model, X)
        try:
            loss, grads = _backward(model, acts, Z, targets, tau)
        except NumericalFailure as exc:
            raise DivergedTraining(f"loss diverged at step {step}") from exc
        loss /= n
        acc = float(np.mean(Z.argmax(axis=1) == labels)) if labels is not None else None
        done = step == config.steps
        if config.stop_loss is not None and loss < config.stop_loss:
            done = done or not require_fit or acc == 1.0
        if config.stop_excess is not None and loss - floor < config.stop_excess:
            done = True
        if step % config.record_every == 0 or done:
            record(step, loss, acc)
        if done:
            break
        adam_step(model, grads, state)
        if callback is not None:
            callback(step + 1, model)
    if not all(np.all(np.isfinite(p)) for p in model.params()):
        raise DivergedTraining("parameters became non-finite")
    return trace


def build_model(rng: RngLike, arch: str, d: int, c: int, hidden: Sequence[int] = (), bias=None) -> Model:
    hidden = tuple(hidden)
    depth = {"linear": 0, "mlp1": 1, "mlp2": 2}[arch]
    if len(hidden) == 1 and depth == 2:
        hidden = hidden * 2
    if len(hidden) != depth:
        raise ValueError(f"{arch} needs {depth} hidden widths, got {hidden}")
    return init_params(rng, arch, (d, *hidden, c), bias=bias)


def train_teacher(
    rng: RngLike,
    data: Dataset,
    arch: str,
    hidden: Sequence[int] = (),
    config: Optional[TrainConfig] = None,
    bias=None,
    eval_sets: Optional[EvalSets] = None,
) -> tuple[Model, Trace]:
    """Fit a teacher to one-hot labels at temperature 1.

    Stops at the step budget, or once the teacher classifies every training
    point correctly and its mean loss is below ``config.stop_loss``.
    """
    config = config or TrainConfig()
    model = build_model(rng, arch, data.d, data.c, hidden, bias)
    trace = fit(
        model,
        data.inputs,
        one_hot(data.labels, data.c),
        1.0,
        config,
        labels=data.labels,
        eval_sets=eval_sets,
        require_fit=True,
    )
    for rec in trace.records:
        rec["acc_T_star"] = rec.pop("acc_fit")
    model.meta.update(role="teacher", steps=int(trace.records[-1]["step"]))
    return model, trace


def default_student_steps(arch: str) -> int:
    """5,000 steps for linear students; MLP students get 50,000."""
    return 5000 if arch == "linear" else 50_000


def train_student(
    rng: RngLike,
    X_train: np.ndarray,
    targets: np.ndarray,
    tau: float,
    arch: str,
    hidden: Sequence[int] = (),
    config: Optional[TrainConfig] = None,
    labels: Optional[np.ndarray] = None,
    eval_sets: Optional[EvalSets] = None,
    init: Optional[Model] = None,
    bias=None,
) -> tuple[Model, Trace]:
    """Train a student on soft labels at the same temperature they were made with.

    ``targets`` is an ``(n_train, c)`` array (or a :class:`SoftLabelSet`).
    ``init`` starts the student from a copy of the given model instead of a
    random draw. Trace keys are ``acc_<name>``/``ce_<name>`` for every entry
    of ``eval_sets``.
    """
    config = config or TrainConfig(steps=default_student_steps(arch))
    if isinstance(targets, SoftLabelSet):
        targets = targets.probs
    X_train = np.asarray(X_train, dtype=np.float64)
    if targets.shape[0] != X_train.shape[0]:
        raise ShapeMismatch("one soft-label row per training input is required")
    model = init.copy() if init is not None else build_model(rng, arch, X_train.shape[1], targets.shape[1], hidden, bias)
    trace = fit(model, X_train, targets, tau, config, labels=labels, eval_sets=eval_sets)
    model.meta.update(role="student", tau=float(tau), steps=int(trace.records[-1]["step"]))
    return model, trace


def pinv_student(
    X_train: np.ndarray, teacher_logits: np.ndarray, rank_tol: float = 1e-10
) -> Model:
    """Linear student ``W = (X^+ Z)^T`` fitted to teacher logits by least squares."""
    W = least_squares_min_norm(X_train, teacher_logits, rank_tol)
    if W.ndim == 1:
        W = W[:, None]
    return Model("linear", [Layer(np.ascontiguousarray(W.T))], {"role": "student", "mode": "pinv"})
