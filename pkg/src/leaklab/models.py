"""Linear and ReLU-MLP classifiers with hand-written backprop and Adam."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import decode_array, encode_array
from .errors import NumericalFailure, ShapeMismatch
from .numkit import RngLike, as_generator

ARCHS = {"linear": 0, "mlp1": 1, "mlp2": 2}


@dataclass
class Layer:
    W: np.ndarray  # (out, in)
    b: Optional[np.ndarray] = None

    def arrays(self) -> list[np.ndarray]:
        return [self.W] if self.b is None else [self.W, self.b]


@dataclass
class Model:
    arch: str
    layers: list[Layer]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}")
        if len(self.layers) != ARCHS[self.arch] + 1:
            raise ValueError(f"{self.arch} needs {ARCHS[self.arch] + 1} layers, got {len(self.layers)}")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.W.shape[1] != prev.W.shape[0]:
                raise ShapeMismatch("layer shapes do not chain")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.layers[0].W.shape[1],) + tuple(layer.W.shape[0] for layer in self.layers)

    @property
    def d(self) -> int:
        return self.widths[0]

    @property
    def c(self) -> int:
        return self.widths[-1]

    def params(self) -> list[np.ndarray]:
        return [a for layer in self.layers for a in layer.arrays()]

    def copy(self) -> "Model":
        layers = [Layer(l.W.copy(), None if l.b is None else l.b.copy()) for l in self.layers]
        return Model(self.arch, layers, dict(self.meta))


def init_params(
    rng: RngLike,
    arch: str,
    widths,
    scheme: str = "normal_fan_in",
    bias: Optional[bool] = None,
) -> Model:
    """Random model with weights ~ N(0, 1/fan_in) and zero biases.

    ``widths`` is ``(d, c)`` for linear models, ``(d, p, c)`` for mlp1 and
    ``(d, p1, p2, c)`` for mlp2. Biases default to on for MLPs and off for the
    linear model.
    """
    if arch not in ARCHS:
        raise ValueError(f"unknown arch {arch!r}")
    widths = tuple(int(w) for w in widths)
    if len(widths) != ARCHS[arch] + 2 or min(widths) < 1:
        raise ValueError(f"invalid widths {widths} for {arch}")
    if scheme not in ("normal_fan_in", "zeros"):
        raise ValueError(f"unknown init scheme {scheme!r}")
    if bias is None:
        bias = arch != "linear"
    g = as_generator(rng)
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        if scheme == "zeros":
            W = np.zeros((fan_out, fan_in))
        else:
            W = g.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in)
        layers.append(Layer(W, np.zeros(fan_out) if bias else None))
    return Model(arch, layers, {"init": scheme})


def _check_input(model: Model, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.d:
        raise ShapeMismatch(f"expected inputs with {model.d} columns, got shape {X.shape}")
    return X


def _forward(model: Model, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Logits plus the post-ReLU activations feeding each layer."""
    acts = [X]
    h = X
    last = len(model.layers) - 1
    for i, layer in enumerate(model.layers):
        h = h @ layer.W.T
        if layer.b is not None:
            h += layer.b
        if i < last:
            h = np.maximum(h, 0.0)
            acts.append(h)
    return h, acts


def forward_logits(model: Model, X: np.ndarray) -> np.ndarray:
    """Logits ``(n, c)`` for inputs ``(n, d)``."""
    return _forward(model, _check_input(model, X))[0]


def log_softmax(Z: np.ndarray, tau: float = 1.0) -> np.ndarray:
    S = Z / tau
    S = S - S.max(axis=1, keepdims=True)
    return S - np.log(np.exp(S).sum(axis=1, keepdims=True))


def ce_loss(Z: np.ndarray, targets: np.ndarray, tau: float = 1.0) -> float:
    """Summed cross-entropy of logits against (possibly unnormalised) targets."""
    return float(-(targets * log_softmax(Z, tau)).sum())


def _backward(model, acts, Z, targets, tau):
    # probabilities computed exactly as softmax_with_temperature does, so that
    # soft labels taken from the same logits give a logit gradient of exactly 0
    shifted = (Z - Z.max(axis=1, keepdims=True)) / tau
    e = np.exp(shifted)
    total = e.sum(axis=1, keepdims=True)
    logp = shifted - np.log(total)
    loss = float(-(targets * logp).sum())
    if not np.isfinite(loss):
        raise NumericalFailure("cross-entropy loss is not finite")
    S = targets.sum(axis=1, keepdims=True)
    S = np.where(np.abs(S - 1.0) <= 1e-12, 1.0, S)
    delta = (S * (e / total) - targets) / tau
    grads: list[tuple[np.ndarray, Optional[np.ndarray]]] = []
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        a = acts[i]
        gW = delta.T @ a
        gb = delta.sum(axis=0) if layer.b is not None else None
        grads.append((gW, gb))
        if i > 0:
            delta = (delta @ layer.W) * (a > 0)
    grads.reverse()
    return loss, grads


def backward_ce(model: Model, X: np.ndarray, targets: np.ndarray, tau: float = 1.0):
    """Loss and parameter gradients of the temperature cross-entropy.

    The loss is ``-sum_mu sum_k t_k log softmax(z_mu / tau)_k``; target rows
    need not sum to one. Per sample, the logit gradient is
    ``(S * softmax(z / tau) - t) / tau`` with ``S = sum_k t_k``.

    Returns:
        ``(loss, grads)`` with ``grads[i] = (dW, db or None)`` per layer.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    X = _check_input(model, X)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (X.shape[0], model.c):
        raise ShapeMismatch(f"targets must have shape {(X.shape[0], model.c)}, got {targets.shape}")
    Z, acts = _forward(model, X)
    return _backward(model, acts, Z, targets, tau)


@dataclass
class AdamState:
    """Moment estimates for Adam; ``weight_decay`` is decoupled (AdamW-style)."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def for_model(cls, model: Model, **hyper) -> "AdamState":
        params = model.params()
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **hyper)


def adam_step(model: Model, grads, state: AdamState) -> tuple[Model, AdamState]:
    """One bias-corrected Adam update, in place on ``model`` and ``state``."""
    flat_grads = [g for pair in grads for g in pair if g is not None]
    params = model.params()
    if len(flat_grads) != len(params):
        raise ShapeMismatch("gradient structure does not match model")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, flat_grads, state.m, state.v):
        if state.weight_decay:
            p *= 1.0 - state.lr * state.weight_decay
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return model, state


def model_to_dict(model: Model) -> dict:
    return {
        "format": "leaklab.model/1",
        "arch": model.arch,
        "widths": list(model.widths),
        "layers": [
            {
                "W": encode_array(l.W),
                "b": None if l.b is None else encode_array(l.b),
            }
            for l in model.layers
        ],
        "meta": model.meta,
    }


def model_from_dict(obj: dict) -> Model:
    widths = obj["widths"]
    layers = []
    for (fan_in, fan_out), entry in zip(zip(widths[:-1], widths[1:]), obj["layers"]):
        b = None if entry["b"] is None else decode_array(entry["b"], (fan_out,))
        layers.append(Layer(decode_array(entry["W"], (fan_out, fan_in)), b))
    return Model(obj["arch"], layers, dict(obj.get("meta") or {}))
