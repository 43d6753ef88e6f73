"""Tape engine tests: per-primitive gradient checks against central
finite differences, kink conventions at clip/sign/abs, gradient
accumulation, determinism, and the error paths."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from noisyact.autodiff import (
    ForwardContext,
    Parameter,
    Tape,
    as_tensor,
    stable_sigmoid,
)
from noisyact.rng import RngStream

from helpers import check_grads, numeric_grad, rel_err, tape_grads

RNG = RngStream(20240808)


def _weights(shape):
    # fixed non-uniform weighting so a wrong VJP cannot hide behind g=1
    return RngStream(7).uniform(0.5, 1.5, shape)


def _weighted_total(tape, v):
    w = tape.constant(_weights(tape.shape(v)))
    return tape.total(tape.mul(v, w))


# ---------------------------------------------------------------------------
# Per-primitive finite-difference checks at random interior points.


def test_grad_add_sub_mul():
    x = RNG.uniform(-2.0, 2.0, (10, 7))
    y = RNG.uniform(-2.0, 2.0, (10, 7))
    check_grads(lambda t, a, b: _weighted_total(t, t.add(a, b)), x, y)
    check_grads(lambda t, a, b: _weighted_total(t, t.sub(a, b)), x, y)
    check_grads(lambda t, a, b: _weighted_total(t, t.mul(a, b)), x, y)


def test_grad_matmul():
    a = RNG.uniform(-1.0, 1.0, (5, 4))
    b = RNG.uniform(-1.0, 1.0, (4, 3))
    check_grads(lambda t, u, v: _weighted_total(t, t.matmul(u, v)), a, b)


def test_grad_broadcast_add():
    x = RNG.uniform(-1.0, 1.0, (6, 4))
    b = RNG.uniform(-1.0, 1.0, (4,))
    check_grads(lambda t, u, v: _weighted_total(t, t.broadcast_add(u, v)), x, b)


def test_grad_broadcast_mul_vector_and_scalar():
    x = RNG.uniform(-1.0, 1.0, (6, 4))
    s = RNG.uniform(0.5, 1.5, (4,))
    check_grads(lambda t, u, v: _weighted_total(t, t.broadcast_mul(u, v)), x, s)
    k = RNG.uniform(0.5, 1.5, ())
    check_grads(lambda t, u, v: _weighted_total(t, t.broadcast_mul(u, v)), x, k)


def test_grad_scalar_ops():
    x = RNG.uniform(-2.0, 2.0, (8,))
    check_grads(lambda t, u: _weighted_total(t, t.scalar_mul(u, -1.7)), x)
    check_grads(lambda t, u: _weighted_total(t, t.add_scalar(u, 3.25)), x)


def test_grad_clip_interior():
    # interior points at least 1e-3 from both clip boundaries
    x = RNG.uniform(-0.95, 0.95, (100,))
    check_grads(lambda t, u: _weighted_total(t, t.clip(u, -1.0, 1.0)), x)
    outside = np.concatenate([RNG.uniform(1.1, 3.0, (50,)), RNG.uniform(-3.0, -1.1, (50,))])
    check_grads(lambda t, u: _weighted_total(t, t.clip(u, -1.0, 1.0)), outside)


def test_grad_relu():
    x = RNG.uniform(0.05, 2.0, (40,)) * np.where(RNG.uniform(0, 1, (40,)) < 0.5, -1, 1)
    check_grads(lambda t, u: _weighted_total(t, t.relu(u)), x)


def test_grad_smooth_unary():
    x = RNG.uniform(-2.0, 2.0, (60,))
    check_grads(lambda t, u: _weighted_total(t, t.sigmoid(u)), x)
    check_grads(lambda t, u: _weighted_total(t, t.tanh(u)), x)
    check_grads(lambda t, u: _weighted_total(t, t.exp(u)), x)
    check_grads(lambda t, u: _weighted_total(t, t.square(u)), x)
    pos = RNG.uniform(0.2, 3.0, (60,))
    check_grads(lambda t, u: _weighted_total(t, t.log(u)), pos)


def test_grad_abs_away_from_origin():
    x = RNG.uniform(0.05, 2.0, (40,)) * np.where(RNG.uniform(0, 1, (40,)) < 0.5, -1, 1)
    check_grads(lambda t, u: _weighted_total(t, t.absolute(u)), x)


def test_grad_sign_is_zero():
    # the FD oracle of a step function away from 0 is also zero
    x = RNG.uniform(0.1, 2.0, (30,)) * np.where(RNG.uniform(0, 1, (30,)) < 0.5, -1, 1)
    check_grads(lambda t, u: _weighted_total(t, t.sign(u)), x)
    (g,) = tape_grads(lambda t, u: _weighted_total(t, t.sign(u)), np.array([0.0, -1.0, 2.0]))
    assert np.array_equal(g, np.zeros(3))


def test_grad_select():
    mask = np.array([True, False, True, True, False])
    a = RNG.uniform(-1.0, 1.0, (5,))
    b = RNG.uniform(-1.0, 1.0, (5,))
    check_grads(lambda t, u, v: _weighted_total(t, t.select(mask, u, v)), a, b)


def test_grad_total_and_mean_axis():
    x = RNG.uniform(-1.0, 1.0, (5, 3))
    check_grads(lambda t, u: t.total(u), x)
    check_grads(lambda t, u: _weighted_total(t, t.mean_axis(u, 0)), x)
    check_grads(lambda t, u: _weighted_total(t, t.mean_axis(u, 1)), x)


def test_grad_softmax_cross_entropy():
    logits = RNG.uniform(-2.0, 2.0, (6, 4))
    labels = RNG.integers(0, 4, (6,))
    check_grads(lambda t, u: t.softmax_cross_entropy(u, labels), logits)


def test_grad_composite_network_expression():
    # matmul -> bias -> tanh -> cross entropy, against the 1e-6 composite bar
    x = RNG.uniform(-1.0, 1.0, (4, 3))
    w = RNG.uniform(-1.0, 1.0, (3, 5))
    b = RNG.uniform(-0.5, 0.5, (5,))
    labels = np.array([0, 2, 4, 1])

    def build(t, wv, bv):
        z = t.broadcast_add(t.matmul(t.constant(x), wv), bv)
        return t.softmax_cross_entropy(t.tanh(z), labels)

    check_grads(build, w, b, rtol=1e-6)


# ---------------------------------------------------------------------------
# Documented examples and kink conventions.


def test_square_sum_example():
    x = np.array([1.0, 2.0, 3.0])
    (g,) = tape_grads(lambda t, u: t.total(t.square(u)), x)
    assert np.array_equal(g, np.array([2.0, 4.0, 6.0]))


def test_clip_gradient_examples():
    (g,) = tape_grads(lambda t, u: t.total(t.clip(u, -1.0, 1.0)), np.array(0.5))
    assert float(g) == 1.0
    (g,) = tape_grads(lambda t, u: t.total(t.clip(u, -1.0, 1.0)), np.array(2.0))
    assert float(g) == 0.0


def test_clip_gradient_is_one_at_exact_boundaries():
    x = np.array([-1.0, 1.0, 0.0, -1.0000001, 1.0000001])
    (g,) = tape_grads(lambda t, u: t.total(t.clip(u, -1.0, 1.0)), x)
    assert np.array_equal(g, np.array([1.0, 1.0, 1.0, 0.0, 0.0]))


def test_abs_gradient_zero_at_origin():
    (g,) = tape_grads(lambda t, u: t.total(t.absolute(u)), np.array([0.0, -2.0, 3.0]))
    assert np.array_equal(g, np.array([0.0, -1.0, 1.0]))


def test_accumulation_is_additive():
    # f(x) = x*x via two uses of the same node vs f(x, y) = x*y at y = x
    x = np.array([0.7, -1.3, 2.0])
    (g_two_uses,) = tape_grads(lambda t, u: t.total(t.mul(u, u)), x)
    gx, gy = tape_grads(lambda t, u, v: t.total(t.mul(u, v)), x, x.copy())
    assert np.array_equal(g_two_uses, gx + gy)
    assert np.array_equal(g_two_uses, 2.0 * x)


def test_backward_deterministic_bitwise():
    x = RNG.uniform(-1.0, 1.0, (6, 3))

    def run():
        tape = Tape()
        v = tape.leaf(x)
        root = tape.total(tape.square(tape.tanh(v)))
        return tape.backward(root)[v]

    a, b = run(), run()
    assert a.tobytes() == b.tobytes()


def test_unreached_nodes_get_zero_gradients():
    tape = Tape()
    x = tape.leaf(np.array([1.0, 2.0]))
    unused = tape.leaf(np.array([[3.0, 4.0]]))
    root = tape.total(x)
    grads = tape.backward(root)
    assert np.array_equal(grads[unused], np.zeros((1, 2)))
    assert np.array_equal(grads[x], np.ones(2))


def test_leaf_and_constant_are_aliases():
    tape = Tape()
    a = tape.leaf(1.0)
    b = tape.constant(2.0)
    assert tape.value(a) == 1.0 and tape.value(b) == 2.0
    assert Tape.constant is Tape.leaf


# ---------------------------------------------------------------------------
# Error paths.


def test_backward_rejects_non_scalar_root():
    tape = Tape()
    x = tape.leaf(np.array([1.0, 2.0]))
    with pytest.raises(ValueError, match="scalar"):
        tape.backward(x)


def test_record_rejects_unknown_kind_and_foreign_ids():
    tape = Tape()
    x = tape.leaf(np.zeros(3))
    with pytest.raises(ValueError, match="unknown primitive"):
        tape.record("convolve", (x,))
    with pytest.raises(ValueError, match="not on this tape"):
        tape.record("add", (x, x + 5))


def test_shape_validation_errors():
    tape = Tape()
    a = tape.leaf(np.zeros((2, 3)))
    b = tape.leaf(np.zeros((3, 2)))
    vec = tape.leaf(np.zeros(2))
    with pytest.raises(ValueError, match="add: shape mismatch"):
        tape.add(a, b)
    with pytest.raises(ValueError, match="matmul: shape mismatch"):
        tape.matmul(a, a)
    with pytest.raises(ValueError, match="broadcast_add: shape mismatch"):
        tape.broadcast_add(a, vec)
    with pytest.raises(ValueError, match="broadcast_mul: shape mismatch"):
        tape.broadcast_mul(a, vec)
    with pytest.raises(ValueError, match="select: shape mismatch"):
        tape.select(np.array([True, False]), a, a)


def test_softmax_cross_entropy_validation():
    tape = Tape()
    logits = tape.leaf(np.zeros((4, 3)))
    with pytest.raises(ValueError, match="label out of range"):
        tape.softmax_cross_entropy(logits, np.array([0, 1, 2, 3]))
    with pytest.raises(ValueError, match="shape mismatch"):
        tape.softmax_cross_entropy(logits, np.array([0, 1]))
    vec = tape.leaf(np.zeros(3))
    with pytest.raises(ValueError, match="shape mismatch"):
        tape.softmax_cross_entropy(vec, np.array([0, 1, 2]))


# ---------------------------------------------------------------------------
# Numeric utilities and the forward context.


def test_stable_sigmoid_extremes_and_values():
    x = np.array([-1000.0, -30.0, 0.0, 30.0, 1000.0])
    # exp underflow-to-zero is the intended saturation path; trap the rest
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        y = stable_sigmoid(x)
    assert np.all(np.isfinite(y))
    assert y[0] == 0.0 and y[-1] == 1.0 and y[2] == 0.5
    mid = np.linspace(-20, 20, 41)
    assert np.allclose(stable_sigmoid(mid), 1.0 / (1.0 + np.exp(-mid)), rtol=0, atol=1e-15)


@given(st.floats(-50, 50))
@settings(deadline=None)
def test_stable_sigmoid_range_property(x):
    y = float(stable_sigmoid(np.array(x)))
    assert 0.0 <= y <= 1.0


def test_as_tensor_coerces_to_float64():
    t = as_tensor([1, 2])
    assert t.dtype == np.float64
    assert as_tensor(3).shape == ()


def test_forward_context_binds_parameters_once():
    tape = Tape()
    ctx = ForwardContext(tape)
    p = Parameter("w", np.array([1.0, 2.0]))
    v1, v2 = ctx.var(p), ctx.var(p)
    assert v1 == v2
    root = tape.total(tape.square(ctx.var(p)))
    grads = tape.backward(root)
    assert np.array_equal(ctx.grad_of(grads, p), 2.0 * p.value)
    q = Parameter("unused", np.zeros((2, 2)))
    assert np.array_equal(ctx.grad_of(grads, q), np.zeros((2, 2)))


def test_numeric_grad_helper_self_check():
    # the oracle itself, sanity-checked on a closed form
    x = np.array([0.3, -0.8])
    g = numeric_grad(lambda v: float(np.sum(v**3)), x)
    assert rel_err(g, 3.0 * x**2).max() < 1e-8
