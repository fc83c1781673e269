"""Dense linear algebra, seeded random streams and gradient checking.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Randomness is
drawn from counter-based Philox generators whose keys are derived from a
base seed plus a tuple of stream names, so any sweep cell can rebuild its own
stream without replaying the ones before it.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .errors import NumericalFailure

__all__ = [
    "RngState",
    "as_generator",
    "stream_key",
    "gaussian_matrix",
    "least_squares_min_norm",
    "finite_diff_gradient",
]


def stream_key(name) -> int:
    """Map a stream name (str, int or float) to a stable 32-bit key."""
    if isinstance(name, (int, np.integer)) and not isinstance(name, bool) and 0 <= name < 2**32:
        return int(name)
    digest = hashlib.sha256(repr(name).encode()).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass(frozen=True)
class RngState:
    """A seed plus a stream path. Children with distinct names never collide."""

    seed: int
    key: tuple[int, ...] = ()

    def child(self, *names) -> "RngState":
        return RngState(self.seed, self.key + tuple(stream_key(n) for n in names))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=self.key)
        return np.random.Generator(np.random.Philox(ss))


RngLike = Union[RngState, np.random.Generator, int]


def as_generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngState):
        return rng.generator()
    return RngState(int(rng)).generator()


def gaussian_matrix(rng: RngLike, rows: int, cols: int) -> np.ndarray:
    """I.i.d. standard normal ``rows x cols`` matrix."""
    if rows < 1 or cols < 1:
        raise ValueError(f"rows and cols must be >= 1, got {rows}x{cols}")
    return as_generator(rng).standard_normal((rows, cols))


def least_squares_min_norm(X: np.ndarray, Z: np.ndarray, rank_tol: float = 1e-10) -> np.ndarray:
    """Minimum-Frobenius-norm minimiser W of ||X W - Z||^2.

    Uses a thin SVD of X. Singular values below ``rank_tol`` times the largest
    one are dropped, which gives the pseudo-inverse solution in both the
    over- and under-determined case.

    Args:
        X: (n, d) input matrix.
        Z: (n, c) targets; a length-n vector is accepted and yields a length-d
            vector.
        rank_tol: relative singular value cutoff.

    Returns:
        (d, c) array (or (d,) when ``Z`` is a vector).
    """
    if rank_tol <= 0:
        raise ValueError("rank_tol must be positive")
    X = np.asarray(X, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    vector = Z.ndim == 1
    if vector:
        Z = Z[:, None]
    if X.ndim != 2 or Z.shape[0] != X.shape[0]:
        raise ValueError(f"incompatible shapes {X.shape} and {Z.shape}")
    try:
        U, s, Vt = np.linalg.svd(X, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"SVD did not converge: {exc}") from exc
    if s.size == 0 or s[0] == 0.0:
        W = np.zeros((X.shape[1], Z.shape[1]))
    else:
        keep = s > rank_tol * s[0]
        W = Vt[keep].T @ ((U[:, keep].T @ Z) / s[keep][:, None])
    if not np.all(np.isfinite(W)):
        raise NumericalFailure("least-squares solution is not finite")
    return W[:, 0] if vector else W


def finite_diff_gradient(
    f: Callable[[np.ndarray], float], theta: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function.

    ``theta`` may have any shape; the result has the same shape.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    theta = np.array(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    flat = theta.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(theta)
        flat[i] = orig - h
        fm = f(theta)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalFailure(f"non-finite function value at coordinate {i}")
        out[i] = (fp - fm) / (2.0 * h)
    return grad
