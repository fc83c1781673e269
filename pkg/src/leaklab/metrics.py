"""Accuracy panel, leakage regimes and threshold crossing estimates."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidCurve
from .models import Model, forward_logits

METRIC_FIELDS = (
    "acc_T_star",
    "acc_S_train",
    "acc_S_test",
    "acc_T_val",
    "acc_S_val",
    "acc_S_match_T",
    "mse_train",
    "mse_test",
)


def accuracy_from_logits(Z: np.ndarray, labels: np.ndarray) -> float:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index
    return float(np.mean(np.argmax(Z, axis=1) == np.asarray(labels)))


def accuracy(model: Model, X: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax logit equals the label."""
    if len(X) == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return accuracy_from_logits(forward_logits(model, X), labels)


def match_accuracy(student: Model, teacher: Model, X: np.ndarray) -> float:
    """Fraction of rows where student and teacher predict the same class."""
    if student.c != teacher.c:
        raise ValueError("student and teacher must share the output dimension")
    return accuracy_from_logits(forward_logits(student, X), np.argmax(forward_logits(teacher, X), axis=1))


def mse_from_logits(Zs: np.ndarray, Zt: np.ndarray, center: bool = False) -> float:
    diff = Zs - Zt
    if center:
        diff = diff - diff.mean(axis=1, keepdims=True)
    return float(np.mean(np.sum(diff * diff, axis=1)))


def logit_mse(student: Model, teacher: Model, X: np.ndarray, center: bool = False) -> float:
    """Squared logit distance summed over classes and averaged over samples.

    With ``center=True`` each sample's logit difference has its mean removed
    first. Softmax is blind to a per-sample shift of all logits, so this is the
    distance a cross-entropy-trained student can actually drive to zero.
    """
    if student.c != teacher.c:
        raise ValueError("student and teacher must share the output dimension")
    return mse_from_logits(forward_logits(student, X), forward_logits(teacher, X), center)


@dataclass
class MetricsRecord:
    acc_T_star: float
    acc_S_train: float
    acc_S_test: float
    acc_T_val: float
    acc_S_val: float
    acc_S_match_T: float
    mse_train: float
    mse_test: float

    def __post_init__(self):
        for name in METRIC_FIELDS:
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"{name} is not finite")
            if name.startswith("acc") and not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")
            if name.startswith("mse") and value < 0:
                raise ValueError(f"{name} is negative")
            setattr(self, name, value)

    def to_dict(self) -> dict:
        return asdict(self)


class Regime(str, Enum):
    trivial_leakage = "trivial_leakage"
    weak_leakage_memorizing = "weak_leakage_memorizing"
    weak_leakage_nonmemorizing = "weak_leakage_nonmemorizing"
    full_recovery = "full_recovery"
    teacher_fail_student_matches = "teacher_fail_student_matches"
    teacher_fail_no_match = "teacher_fail_no_match"

    @property
    def label(self) -> str:
        return self.value


@dataclass(frozen=True)
class Cutoffs:
    memorize: float = 0.99
    full: float = 0.99
    weak: float = 0.55
    mse: float = 0.1

    @classmethod
    def for_classes(cls, c: int, **overrides) -> "Cutoffs":
        """Default cutoffs; above two classes the weak cutoff is ``1/c + 0.05``."""
        weak = 0.55 if c <= 2 else 1.0 / c + 0.05
        return cls(**{"weak": weak, **overrides})


def classify_regime(record: MetricsRecord, cutoffs: Cutoffs = Cutoffs()) -> Regime:
    if record.acc_T_star < cutoffs.memorize:
        if record.mse_test < cutoffs.mse:
            return Regime.teacher_fail_student_matches
        return Regime.teacher_fail_no_match
    if record.acc_S_test >= cutoffs.full:
        return Regime.full_recovery
    if record.acc_S_train >= cutoffs.memorize and record.acc_S_test >= cutoffs.weak:
        return Regime.weak_leakage_memorizing
    if record.acc_S_train < cutoffs.memorize and record.acc_S_test >= cutoffs.weak:
        return Regime.weak_leakage_nonmemorizing
    return Regime.trivial_leakage


THRESHOLD_NAMES = ("alpha_T_label", "alpha_S_label", "alpha_S_id", "alpha_S_shuffle_label")


@dataclass
class ThresholdEstimate:
    name: str
    alpha_star: float
    rho: Optional[float] = None
    tau: Optional[float] = None
    criterion: str = ""
    crossed: bool = True
    stderr: float = float("nan")
    n_seeds: int = 1
    n_crossed: int = 1

    @property
    def not_crossed(self) -> bool:
        return not self.crossed


def estimate_threshold(
    curve: Sequence[tuple[float, float]],
    cutoff: float,
    direction: str = "falling",
    name: str = "",
    rho: Optional[float] = None,
    tau: Optional[float] = None,
) -> ThresholdEstimate:
    """First crossing of ``cutoff`` along a curve of (alpha, metric) points.

    A falling crossing is the first segment going from above the cutoff to at
    or below it; a rising crossing goes from below to at or above. The crossing
    alpha is linearly interpolated. If the first point is already past the
    cutoff, its alpha is returned. Without any crossing the estimate carries
    ``crossed=False`` and ``alpha_star`` is the last swept alpha.

    Raises:
        InvalidCurve: for fewer than two points, NaN values or alphas that are
            not strictly increasing.
    """
    if direction not in ("falling", "rising"):
        raise ValueError("direction must be 'falling' or 'rising'")
    pts = np.asarray(curve, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise InvalidCurve("curve needs at least two (alpha, metric) points")
    if not np.all(np.isfinite(pts)):
        raise InvalidCurve("curve contains NaN or infinite values")
    alpha, m = pts[:, 0], pts[:, 1]
    if np.any(np.diff(alpha) <= 0):
        raise InvalidCurve("alpha values must be strictly increasing")
    sign = 1.0 if direction == "falling" else -1.0
    s = sign * (m - cutoff)  # > 0 means "not yet past the cutoff"
    criterion = f"{direction} crossing of {cutoff:g}"
    est = dict(name=name, rho=rho, tau=tau, criterion=criterion)
    if s[0] <= 0:
        return ThresholdEstimate(alpha_star=float(alpha[0]), **est)
    for i in range(len(alpha) - 1):
        if s[i] > 0 >= s[i + 1]:
            frac = s[i] / (s[i] - s[i + 1])
            return ThresholdEstimate(alpha_star=float(alpha[i] + frac * (alpha[i + 1] - alpha[i])), **est)
    return ThresholdEstimate(alpha_star=float(alpha[-1]), crossed=False, n_crossed=0, **est)


def standard_error(values: Sequence[float]) -> float:
    """Sample standard deviation over sqrt(k); NaN for fewer than two values."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return float("nan")
    return float(v.std(ddof=1) / np.sqrt(v.size))


def combine_estimates(estimates: Sequence[ThresholdEstimate]) -> ThresholdEstimate:
    """Mean and standard error of per-seed crossings.

    Seeds that never cross are counted in ``n_seeds`` but excluded from the
    mean; if none cross, the result is flagged ``crossed=False``.
    """
    if not estimates:
        raise ValueError("no estimates to combine")
    crossed = [e.alpha_star for e in estimates if e.crossed]
    first = estimates[0]
    if not crossed:
        return ThresholdEstimate(
            first.name, max(e.alpha_star for e in estimates), first.rho, first.tau,
            first.criterion, False, float("nan"), len(estimates), 0,
        )
    return ThresholdEstimate(
        first.name, float(np.mean(crossed)), first.rho, first.tau, first.criterion,
        True, standard_error(crossed), len(estimates), len(crossed),
    )
