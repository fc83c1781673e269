import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from leaklab.distill import ablate_smallest_k, one_hot, softmax_with_temperature, SoftLabelSet
from leaklab.errors import NumericalFailure, ShapeMismatch
from leaklab.models import (
    AdamState,
    Layer,
    Model,
    adam_step,
    backward_ce,
    ce_loss,
    forward_logits,
    init_params,
    model_from_dict,
    model_to_dict,
)
from leaklab.numkit import RngState, finite_diff_gradient

WIDTHS = {"linear": (4, 3), "mlp1": (4, 6, 3), "mlp2": (4, 6, 5, 3)}


def _flat_check(model, X, targets, tau):
    """Relative error between backward_ce and central differences, per parameter array."""
    _, grads = backward_ce(model, X, targets, tau)
    flat = [g for pair in grads for g in pair if g is not None]
    worst = 0.0
    for p, g in zip(model.params(), flat):
        def f(theta, p=p):
            saved = p.copy()
            p[...] = theta
            val = ce_loss(forward_logits(model, X), targets, tau)
            p[...] = saved
            return val
        num = finite_diff_gradient(f, p.copy(), h=1e-6)
        err = np.linalg.norm(num - g) / max(np.linalg.norm(num) + np.linalg.norm(g), 1e-12)
        worst = max(worst, err)
    return worst


def test_forward_identity_linear():
    X = np.random.default_rng(0).standard_normal((5, 3))
    m = Model("linear", [Layer(np.eye(3))])
    assert np.array_equal(forward_logits(m, X), X)


def test_forward_zero_mlp_gives_final_bias():
    m = init_params(RngState(0), "mlp1", (3, 4, 2), scheme="zeros")
    m.layers[-1].b[:] = [0.5, -1.0]
    Z = forward_logits(m, np.ones((4, 3)))
    assert np.array_equal(Z, np.tile([0.5, -1.0], (4, 1)))


def test_forward_mlp1_matches_scalar_loop():
    m = init_params(RngState(1), "mlp1", (3, 5, 2))
    for layer in m.layers:
        layer.b[:] = np.random.default_rng(2).standard_normal(layer.b.shape)
    x = np.random.default_rng(3).standard_normal(3)
    W1, b1 = m.layers[0].W, m.layers[0].b
    W2, b2 = m.layers[1].W, m.layers[1].b
    hidden = []
    for j in range(5):
        s = b1[j]
        for i in range(3):
            s += W1[j, i] * x[i]
        hidden.append(max(s, 0.0))
    expected = []
    for k in range(2):
        s = b2[k]
        for j in range(5):
            s += W2[k, j] * hidden[j]
        expected.append(s)
    assert np.allclose(forward_logits(m, x), expected, atol=1e-12)


def test_forward_shape_mismatch():
    m = init_params(RngState(0), "linear", (3, 2))
    with pytest.raises(ShapeMismatch):
        forward_logits(m, np.zeros((2, 4)))


def test_model_validates_layer_chain():
    with pytest.raises(ShapeMismatch):
        Model("mlp1", [Layer(np.zeros((4, 3))), Layer(np.zeros((2, 5)))])
    with pytest.raises(ValueError):
        Model("mlp2", [Layer(np.zeros((2, 3)))])


def test_init_scales():
    m = init_params(RngState(0), "mlp1", (1000, 500, 10))
    assert abs(m.layers[0].W.std() - 1 / math.sqrt(1000)) < 1e-3
    assert np.all(m.layers[0].b == 0)
    a = init_params(RngState(4), "mlp2", (5, 6, 7, 3))
    b = init_params(RngState(4), "mlp2", (5, 6, 7, 3))
    assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))
    lin = init_params(RngState(0), "linear", (2, 2))
    assert lin.layers[0].W.shape == (2, 2) and lin.layers[0].b is None
    assert np.all(np.isfinite(lin.layers[0].W))


def test_init_rejects_bad_widths():
    with pytest.raises(ValueError):
        init_params(RngState(0), "mlp1", (3, 2))


def test_gradient_zero_at_soft_label_optimum():
    m = init_params(RngState(0), "linear", (4, 3))
    X = np.random.default_rng(1).standard_normal((5, 4))
    targets = softmax_with_temperature(forward_logits(m, X), 2.0)
    _, grads = backward_ce(m, X, targets, 2.0)
    assert np.max(np.abs(grads[0][0])) < 1e-12


def test_gradient_halves_when_tau_doubles():
    m = init_params(RngState(0), "linear", (4, 3))
    X = np.random.default_rng(1).standard_normal((5, 4))
    # targets chosen so that sigma_tau(z) is (nearly) the same for both tau: scale logits with tau
    m2 = Model("linear", [Layer(2 * m.layers[0].W)])
    t = one_hot(np.array([0, 1, 2, 0, 1]), 3)
    _, g1 = backward_ce(m, X, t, 1.0)
    _, g2 = backward_ce(m2, X, t, 2.0)
    assert np.allclose(g2[0][0], g1[0][0] / 2, atol=1e-12)


def test_gradient_check_reference_instance():
    rng = np.random.default_rng(0)
    m = init_params(RngState(0), "mlp1", (4, 6, 3))
    for layer in m.layers:
        layer.b[:] = rng.standard_normal(layer.b.shape) * 0.1
    X = rng.standard_normal((5, 4))
    t = softmax_with_temperature(rng.standard_normal((5, 3)), 1.0)
    assert _flat_check(m, X, t, 1.0) < 1e-5


@settings(max_examples=30, deadline=None)
@given(
    arch=st.sampled_from(["linear", "mlp1", "mlp2"]),
    kind=st.sampled_from(["onehot", "soft", "ablated"]),
    tau=st.sampled_from([0.5, 1.0, 20.0]),
    seed=st.integers(0, 10_000),
)
def test_gradient_check_property(arch, kind, tau, seed):
    rng = np.random.default_rng(seed)
    m = init_params(RngState(seed), arch, WIDTHS[arch])
    for layer in m.layers:
        if layer.b is not None:
            layer.b[:] = rng.standard_normal(layer.b.shape) * 0.1
    X = rng.standard_normal((5, 4))
    labels = rng.integers(0, 3, 5)
    if kind == "onehot":
        t = one_hot(labels, 3)
    else:
        t = softmax_with_temperature(rng.standard_normal((5, 3)) * 2, tau)
        if kind == "ablated":
            t = ablate_smallest_k(SoftLabelSet(t, tau), 1).probs
    assert _flat_check(m, X, t, tau) < 1e-5


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_backward_nonfinite_loss():
    m = init_params(RngState(0), "linear", (2, 2))
    with pytest.raises(NumericalFailure):
        backward_ce(m, np.array([[np.inf, 0.0]]), np.array([[1.0, 0.0]]), 1.0)


def test_positive_homogeneity_of_hidden_layer():
    rng = np.random.default_rng(5)
    m = init_params(RngState(5), "mlp1", (3, 7, 2))
    m.layers[0].b[:] = rng.standard_normal(7)
    X = rng.standard_normal((6, 3))
    h = np.maximum(X @ m.layers[0].W.T + m.layers[0].b, 0)
    lam = 3.7
    h2 = np.maximum(X @ (lam * m.layers[0].W).T + lam * m.layers[0].b, 0)
    assert np.allclose(h2, lam * h, atol=1e-12)
    # and with the output weights scaled by 1/lam the logits are unchanged
    m2 = m.copy()
    m2.layers[0].W *= lam
    m2.layers[0].b *= lam
    m2.layers[1].W /= lam
    assert np.allclose(forward_logits(m2, X), forward_logits(m, X), atol=1e-12)


def test_adam_first_step_has_size_lr():
    m = Model("linear", [Layer(np.zeros((2, 3)))])
    g = np.array([[1.0, -2.0, 0.5], [3.0, -0.1, 4.0]])
    state = AdamState.for_model(m, lr=0.01)
    adam_step(m, [(g, None)], state)
    assert np.allclose(m.layers[0].W, -0.01 * np.sign(g), atol=1e-9)
    assert state.t == 1


def test_adam_zero_gradient_keeps_params():
    m = init_params(RngState(0), "mlp1", (2, 3, 2))
    before = [p.copy() for p in m.params()]
    state = AdamState.for_model(m)
    adam_step(m, [(np.zeros_like(l.W), np.zeros_like(l.b)) for l in m.layers], state)
    assert all(np.array_equal(a, b) for a, b in zip(before, m.params()))


def _reference_adam(theta, steps, lr, b1=0.9, b2=0.999, eps=1e-8, wd=0.0):
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = 2.0 * theta
        theta = theta - lr * wd * theta
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        theta = theta - lr * mhat / (math.sqrt(vhat) + eps)
        out.append(theta)
    return out


@pytest.mark.parametrize("wd", [0.0, 0.5])
def test_adam_matches_scalar_reference(wd):
    m = Model("linear", [Layer(np.array([[1.0]]))])
    state = AdamState.for_model(m, lr=0.1, weight_decay=wd)
    trace = []
    for _ in range(3):
        theta = m.layers[0].W[0, 0]
        adam_step(m, [(np.array([[2.0 * theta]]), None)], state)
        trace.append(m.layers[0].W[0, 0])
    assert np.allclose(trace, _reference_adam(1.0, 3, 0.1, wd=wd), rtol=0, atol=1e-14)


def test_adam_structure_mismatch():
    m = init_params(RngState(0), "mlp1", (2, 3, 2))
    with pytest.raises(ShapeMismatch):
        adam_step(m, [(np.zeros((3, 2)), None)], AdamState.for_model(m))


def test_adam_second_moment_nonnegative():
    m = init_params(RngState(0), "mlp1", (3, 4, 2))
    X = np.random.default_rng(0).standard_normal((6, 3))
    t = one_hot(np.array([0, 1, 0, 1, 0, 1]), 2)
    state = AdamState.for_model(m)
    for _ in range(5):
        _, grads = backward_ce(m, X, t)
        adam_step(m, grads, state)
    assert all(np.all(v >= 0) for v in state.v)
    assert all(a.shape == p.shape for a, p in zip(state.m, m.params()))


def test_loss_decreases_on_tiny_memorization_task():
    good = 0
    for seed in range(5):
        rs = RngState(seed)
        g = rs.child("data").generator()
        X = g.standard_normal((20, 10))
        t = one_hot(g.integers(0, 2, 20), 2)
        m = init_params(rs.child("init"), "mlp1", (10, 20, 2))
        state = AdamState.for_model(m, lr=1e-3)
        losses = []
        for _ in range(50):
            loss, grads = backward_ce(m, X, t)
            losses.append(loss)
            adam_step(m, grads, state)
        good += all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
    assert good >= 4


def test_model_json_round_trip():
    m = init_params(RngState(3), "mlp2", (4, 5, 6, 3))
    m.meta["role"] = "teacher"
    back = model_from_dict(json.loads(json.dumps(model_to_dict(m))))
    assert back.widths == m.widths and back.meta == m.meta
    assert all(np.array_equal(a, b) for a, b in zip(back.params(), m.params()))
