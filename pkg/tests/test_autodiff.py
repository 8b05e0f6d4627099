"""Tape engine and jet arithmetic checks against hand math and FD."""

import numpy as np
import pytest

from stackpinn.autodiff import (Jet, NonFiniteError, Tensor, concat, jet_concat,
                                jet_cos, linear, mean_sumsq, scatter_rows, value_of)


def test_add_mul_backward_shapes_and_values():
    a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), requires_grad=True)
    b = Tensor(np.array([10.0, 20.0]), requires_grad=True)  # broadcast over rows
    out = ((a * 3.0 + b) * a).sum()
    out.backward()
    # d/da (3a^2 + ab) = 6a + b ; d/db sum_rows(a)
    assert np.allclose(a.grad, 6.0 * a.data + b.data)
    assert np.allclose(b.grad, a.data.sum(axis=0))


def test_div_pow_abs_backward():
    x = Tensor(np.array([-2.0, 0.5, 3.0]), requires_grad=True)
    y = (x.abs() ** 3.0 / 2.0).sum()
    y.backward()
    assert np.allclose(x.grad, 1.5 * x.data ** 2 * np.sign(x.data))


def test_unary_function_grads_vs_fd():
    rng = np.random.default_rng(0)
    x0 = rng.uniform(-1.5, 1.5, 7)
    for name in ("tanh", "sin", "cos", "exp", "sigmoid"):
        x = Tensor(x0.copy(), requires_grad=True)
        getattr(x, name)().sum().backward()
        h = 1e-6
        fd = (getattr(np, name, None) or (lambda v: 1 / (1 + np.exp(-v))))
        num = (fd(x0 + h) - fd(x0 - h)) / (2 * h)
        assert np.allclose(x.grad, num, atol=1e-8)


def test_linear_op_grads():
    x = Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
    W = Tensor(np.array([[3.0, 4.0], [5.0, 6.0], [0.5, -1.0]]), requires_grad=True)
    b = Tensor(np.zeros(3), requires_grad=True)
    linear(x, W, b).sum().backward()
    assert np.allclose(x.grad, W.data.sum(axis=0))
    assert np.allclose(W.grad, np.ones((3, 1)) @ x.data)
    assert np.allclose(b.grad, np.ones(3))


def test_linear_rejects_dim_mismatch():
    with pytest.raises(ValueError, match="fan-in"):
        linear(np.ones((2, 3)), np.ones((4, 2)))


def test_concat_and_scatter_backward():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    out = concat([a, np.zeros((2, 1))], axis=1)
    (out * np.array([1.0, 2.0, 3.0])).sum().backward()
    assert np.allclose(a.grad, [[1, 2], [1, 2]])

    s = Tensor(np.array([[5.0], [7.0]]), requires_grad=True)
    full = scatter_rows(s, np.array([0, 3]), 4)
    assert np.allclose(value_of(full)[:, 0], [5, 0, 0, 7])
    (full * np.arange(4.0)[:, None]).sum().backward()
    assert np.allclose(s.grad[:, 0], [0, 3])


def test_take_rows_accumulates_repeats():
    x = Tensor(np.array([[1.0], [2.0]]), requires_grad=True)
    x.take_rows(np.array([0, 0, 1])).sum().backward()
    assert np.allclose(x.grad[:, 0], [2, 1])


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2).backward()


def test_nonfinite_detection():
    x = Tensor(np.array([0.0]), requires_grad=True)
    with np.errstate(divide="ignore"):
        y = (1.0 / x).sum()
        with pytest.raises(NonFiniteError):
            y.backward(check_finite=True)


def test_mean_sumsq_matches_definition():
    r = np.arange(6.0).reshape(3, 2)
    assert np.isclose(float(mean_sumsq(r)), (r * r).sum() / 3)


def test_jet_product_and_quotient_rules():
    # f = t^2, g = cos t as jets in t
    t = np.linspace(0.3, 2.0, 9)[:, None]
    f = Jet(t * t, 2 * t, np.full_like(t, 2.0), 2)
    g = jet_cos(Jet(t, np.ones_like(t), None, 2))
    prod = f * g
    assert np.allclose(value_of(prod.val), t * t * np.cos(t))
    assert np.allclose(value_of(prod.d1), 2 * t * np.cos(t) - t * t * np.sin(t))
    assert np.allclose(value_of(prod.d2),
                       2 * np.cos(t) - 4 * t * np.sin(t) - t * t * np.cos(t))
    quot = f / g
    d1 = (2 * t * np.cos(t) + t * t * np.sin(t)) / np.cos(t) ** 2
    assert np.allclose(value_of(quot.d1), d1)
    h = 1e-5
    fd2 = ((t + h) ** 2 / np.cos(t + h) - 2 * t ** 2 / np.cos(t)
           + (t - h) ** 2 / np.cos(t - h)) / h ** 2
    assert np.allclose(value_of(quot.d2), fd2, atol=1e-4)


def test_jet_concat_materialises_zero_components():
    a = Jet(np.ones((3, 2)), np.ones((3, 2)), None, 1)
    b = Jet.constant(np.full((3, 1), 5.0), 1)
    j = jet_concat([a, b])
    assert value_of(j.val).shape == (3, 3)
    assert np.allclose(value_of(j.d1), [[1, 1, 0]] * 3)


def test_constant_graph_records_no_tape():
    a = Tensor(np.ones((2, 2)))  # requires_grad False
    out = (a * 3.0).tanh().sum()
    assert out._backward is None and out._parents == ()
