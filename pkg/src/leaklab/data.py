"""Dataset generators and teacher/student/validation partitions."""
from __future__ import annotations

import base64
import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidSplit
from .numkit import RngLike, RngState, as_generator

KINDS = ("random_iid", "modular_addition", "toy2d")


@dataclass
class Dataset:
    """Inputs ``(n, d)`` with integer labels in ``[0, c)``."""

    inputs: np.ndarray
    labels: np.ndarray
    c: int
    kind: str
    seed: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.labels.shape != (self.inputs.shape[0],):
            raise ValueError("inputs must be (n, d) and labels (n,)")
        if self.kind not in KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.c):
            raise ValueError("labels must lie in [0, c)")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.inputs[idx], self.labels[idx], self.c, self.kind, self.seed, dict(self.meta))

    def digest(self) -> str:
        """Content hash of inputs and labels; equal hashes mean identical data."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.inputs, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        h.update(str(self.c).encode())
        return h.hexdigest()[:16]


@dataclass
class Partition:
    """Index split of a dataset.

    ``student_train_idx`` and ``student_test_idx`` partition ``teacher_idx``.
    The validation data is either ``val_idx`` (the complement of the teacher
    set) or, for random i.i.d. data, a freshly drawn ``val_dataset``.
    """

    teacher_idx: np.ndarray
    student_train_idx: np.ndarray
    student_test_idx: np.ndarray
    val_idx: np.ndarray
    rho: float
    teacher_frac: float = 1.0
    val_dataset: Optional[Dataset] = None

    def val_data(self, dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
        if self.val_dataset is not None:
            return self.val_dataset.inputs, self.val_dataset.labels
        return dataset.inputs[self.val_idx], dataset.labels[self.val_idx]


def _streams(rng: RngLike, *names) -> list[np.random.Generator]:
    if isinstance(rng, RngState):
        return [rng.child(name).generator() for name in names]
    if isinstance(rng, np.random.Generator):
        return list(rng.spawn(len(names)))
    return [RngState(int(rng)).child(name).generator() for name in names]


def _seed_of(rng: RngLike) -> Optional[int]:
    if isinstance(rng, RngState):
        return rng.seed
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    return None


def sample_random_dataset(rng: RngLike, n: int, d: int, c: int) -> Dataset:
    """Gaussian inputs and uniform labels, drawn from independent streams."""
    if n < 1 or d < 1 or c < 2:
        raise ValueError(f"need n, d >= 1 and c >= 2 (got n={n}, d={d}, c={c})")
    g_x, g_y = _streams(rng, "inputs", "labels")
    X = g_x.standard_normal((n, d))
    y = g_y.integers(0, c, size=n)
    return Dataset(X, y, c, "random_iid", _seed_of(rng))


def gen_modular_addition(p: int) -> Dataset:
    """All ``p**2`` pairs (a, b) with label (a + b) mod p.

    Row ``a*p + b`` holds three one-hot blocks of width p: a, b and a constant
    "=" token (placed at index p - 1 of the third block).
    """
    if p < 2:
        raise ValueError("p must be >= 2")
    a, b = np.divmod(np.arange(p * p), p)
    X = np.zeros((p * p, 3 * p))
    rows = np.arange(p * p)
    X[rows, a] = 1.0
    X[rows, p + b] = 1.0
    X[:, 3 * p - 1] = 1.0
    return Dataset(X, (a + b) % p, p, "modular_addition", meta={"p": p})


def gen_toy_2d(rng: RngLike, n: int, c: int) -> Dataset:
    """Two-dimensional Gaussian points with uniform random labels."""
    if n < 1 or c < 2:
        raise ValueError("need n >= 1 and c >= 2")
    g_x, g_y = _streams(rng, "inputs", "labels")
    X = g_x.standard_normal((n, 2))
    y = g_y.integers(0, c, size=n)
    return Dataset(X, y, c, "toy2d", _seed_of(rng))


def teacher_count(n: int, teacher_frac: float) -> int:
    # floor: 30% of 113**2 = 12769 gives 3830 teacher samples
    return int(math.floor(teacher_frac * n + 1e-9))


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + 1e-9))


def make_partition(rng: RngLike, dataset: Dataset, teacher_frac: float, rho: float) -> Partition:
    """Split ``dataset`` into teacher data, student train/test and validation.

    For random i.i.d. data the validation set is a fresh sample with as many
    points as the student test set; otherwise it is every point outside the
    teacher set.

    Raises:
        InvalidSplit: if any of the resulting sets is empty.
    """
    if not 0.0 < teacher_frac <= 1.0:
        raise InvalidSplit(f"teacher_frac must lie in (0, 1], got {teacher_frac}")
    if not 0.0 < rho < 1.0:
        raise InvalidSplit(f"rho must lie in (0, 1), got {rho}")
    g_teacher, g_student, g_val = _streams(rng, "teacher_split", "student_split", "val")
    n_t = teacher_count(dataset.n, teacher_frac)
    perm = g_teacher.permutation(dataset.n)
    teacher_idx = np.sort(perm[:n_t])
    rest = np.sort(perm[n_t:])
    n_train = round_half_up(rho * n_t)
    if n_t == 0 or n_train == 0 or n_train == n_t:
        raise InvalidSplit(f"empty split: n_teacher={n_t}, n_train={n_train}")
    sperm = g_student.permutation(teacher_idx)
    train_idx = np.sort(sperm[:n_train])
    test_idx = np.sort(sperm[n_train:])

    val_dataset = None
    if dataset.kind == "random_iid":
        val_dataset = sample_random_dataset(g_val, test_idx.size, dataset.d, dataset.c)
        val_idx = np.zeros(0, dtype=np.int64)
    else:
        val_idx = rest
        if val_idx.size == 0:
            raise InvalidSplit("validation set is empty (teacher_frac covers the whole dataset)")
    return Partition(teacher_idx, train_idx, test_idx, val_idx, float(rho), float(teacher_frac), val_dataset)


# -- JSON container ---------------------------------------------------------

def encode_array(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def decode_array(s: str, shape) -> np.ndarray:
    return np.frombuffer(base64.b64decode(s), dtype="<f8").reshape(shape).astype(np.float64)


def dataset_to_dict(ds: Dataset) -> dict:
    return {
        "format": "leaklab.dataset/1",
        "kind": ds.kind,
        "shape": [ds.n, ds.d],
        "c": ds.c,
        "inputs": encode_array(ds.inputs),
        "labels": ds.labels.tolist(),
        "seed": ds.seed,
        "meta": ds.meta,
    }


def dataset_from_dict(obj: dict) -> Dataset:
    return Dataset(
        decode_array(obj["inputs"], obj["shape"]),
        np.asarray(obj["labels"], dtype=np.int64),
        int(obj["c"]),
        obj["kind"],
        obj.get("seed"),
        dict(obj.get("meta") or {}),
    )


def partition_to_dict(part: Partition) -> dict:
    return {
        "format": "leaklab.partition/1",
        "rho": part.rho,
        "teacher_frac": part.teacher_frac,
        "teacher_idx": part.teacher_idx.tolist(),
        "student_train_idx": part.student_train_idx.tolist(),
        "student_test_idx": part.student_test_idx.tolist(),
        "val_idx": part.val_idx.tolist(),
        "val_dataset": None if part.val_dataset is None else dataset_to_dict(part.val_dataset),
    }


def partition_from_dict(obj: dict) -> Partition:
    idx = lambda key: np.asarray(obj[key], dtype=np.int64)  # noqa: E731
    val = obj.get("val_dataset")
    return Partition(
        idx("teacher_idx"),
        idx("student_train_idx"),
        idx("student_test_idx"),
        idx("val_idx"),
        float(obj["rho"]),
        float(obj.get("teacher_frac", 1.0)),
        None if val is None else dataset_from_dict(val),
    )
