import numpy as np
import pytest

from bodyik.autograd import (
    Tensor,
    concat,
    cross,
    gelu,
    l2norm,
    layer_norm,
    numeric_grad,
    parameter,
    relative_error,
    softmax,
    stack,
)


def check(fn, *shapes, rng=None, tol=1e-6):
    rng = rng or np.random.default_rng(0)
    xs = [rng.normal(size=s) for s in shapes]
    params = [parameter(x) for x in xs]
    fn(*params).backward()
    for i, x in enumerate(xs):
        def f(v, i=i):
            args = [Tensor(v) if j == i else Tensor(xs[j]) for j in range(len(xs))]
            return float(fn(*args))
        assert relative_error(params[i].grad, numeric_grad(f, x.copy())) < tol


W = np.random.default_rng(1).normal(size=(4, 5))


@pytest.mark.parametrize("fn,shapes", [
    (lambda a, b: ((a * b) / (b * b + 1.0)).sum(), [(3, 4), (3, 4)]),
    (lambda a, b: (a @ b).tanh().sum(), [(2, 3, 4), (4, 5)]),
    (lambda a: (a @ W).exp().mean(), [(3, 4)]),
    (lambda a: ((a * a + 1.0).log() + (a * a + 1.0).sqrt()).sum(), [(6,)]),
    (lambda a: (a.reshape(2, 6).transpose(1, 0)[::2] ** 3.0).sum(), [(3, 4)]),
    (lambda a: (a.swapaxes(0, 1)[np.array([0, 0, 2])] * W[:3, :3]).sum(), [(3, 3)]),
    (lambda a, b: (concat([a, b], axis=1) * np.arange(7.0)).sum(), [(2, 3), (2, 4)]),
    (lambda a, b: (stack([a, b], axis=0) * np.arange(2.0)[:, None]).sum(), [(5,), (5,)]),
    (lambda a, b: (cross(a, b) * np.arange(3.0)).sum(), [(4, 3), (4, 3)]),
    (lambda a: (gelu(a) * np.arange(5.0)).sum(), [(3, 5)]),
    (lambda a, g, b: (layer_norm(a, g, b) * np.arange(5.0)).sum(), [(3, 5), (5,), (5,)]),
    (lambda a: (softmax(a, axis=-1) * np.arange(5.0)).sum(), [(3, 5)]),
    (lambda a: l2norm(a + 3.0, axis=-1).sum(), [(3, 4)]),
    (lambda a: ((a + 0.5).abs() + (a - 0.2).relu()).sum(), [(10,)]),
])
def test_gradients(fn, shapes):
    check(fn, *shapes)


def test_softmax_mask_gives_exact_zeros():
    x = parameter(np.random.default_rng(0).normal(size=(2, 4)))
    mask = np.array([True, True, False, True])
    y = softmax(x, axis=-1, mask=mask)
    assert np.all(y.data[:, 2] == 0.0)
    assert np.allclose(y.data.sum(axis=-1), 1.0)
    (y * np.arange(4.0)).sum().backward()
    assert np.all(x.grad[:, 2] == 0.0)


def test_l2norm_zero_subgradient():
    x = parameter(np.zeros(3))
    l2norm(x).backward()
    assert np.array_equal(x.grad, np.zeros(3))


def test_backward_accumulates_shared_nodes():
    x = parameter(np.array([2.0]))
    y = x * x + x * 3.0
    y.sum().backward()
    assert x.grad[0] == pytest.approx(7.0)


def test_numpy_operands_defer_to_tensor():
    x = parameter(np.ones(3))
    y = np.arange(3.0) * x
    assert isinstance(y, Tensor)
    z = np.eye(3) @ x
    assert isinstance(z, Tensor)
