"""Per-op gradient checks against central finite differences (float64)."""

import numpy as np
import pytest

from tabembed import autograd as ag
from tabembed.autograd import Tensor, parameter


def check_grads(build, tensors, eps=1e-6, tol=1e-6):
    """build() -> scalar Tensor using `tensors`; compare grads to finite diffs."""
    loss = build()
    for t in tensors:
        t.grad = None
    loss.backward()
    for t in tensors:
        flat = t.data.ravel()
        grad = np.zeros_like(flat) if t.grad is None else t.grad.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(build().data)
            flat[i] = orig - eps
            down = float(build().data)
            flat[i] = orig
            num = (up - down) / (2 * eps)
            assert abs(num - grad[i]) <= tol * max(1.0, abs(num), abs(grad[i])), (
                t.name, i, num, grad[i])


def p(shape, seed, name="p"):
    return parameter(np.random.default_rng(seed).normal(size=shape), name)


class TestElementwiseOps:
    def test_add_mul_broadcast(self):
        a, b = p((2, 3), 0, "a"), p((3,), 1, "b")
        check_grads(lambda: ((a + b) * (a * 2.0 - 1.0)).sum(), [a, b])

    def test_div(self):
        a, b = p((4,), 2, "a"), parameter(np.array([1.5, -2.0, 0.7, 3.0]), "b")
        check_grads(lambda: (a / b).sum(), [a, b])

    def test_sigmoid_log_clip(self):
        a = p((5,), 3, "a")
        check_grads(lambda: ag.log(ag.clip(ag.sigmoid(a), 1e-7, 1 - 1e-7)).sum(), [a])

    def test_gelu(self):
        a = p((6,), 4, "a")
        check_grads(lambda: ag.gelu(a).sum(), [a])

    def test_mean_axis(self):
        a = p((3, 4), 5, "a")
        check_grads(lambda: (a.mean(axis=1) * a.sum(axis=0).mean()).sum(), [a])


class TestMatmulAndShapes:
    def test_matmul_2d(self):
        a, b = p((3, 4), 6, "a"), p((4, 2), 7, "b")
        check_grads(lambda: ag.matmul(a, b).sum(), [a, b])

    def test_matmul_batched_broadcast(self):
        a, b = p((2, 3, 4), 8, "a"), p((4, 5), 9, "b")
        check_grads(lambda: ag.matmul(a, b).sum(), [a, b])

    def test_reshape_swapaxes(self):
        a = p((2, 3, 4), 10, "a")
        check_grads(lambda: a.swapaxes(0, 2).reshape(4, 6).sum(axis=0).mean(), [a])

    def test_getitem_slices(self):
        a = p((4, 5), 11, "a")
        check_grads(lambda: (a[1:3, ::2] * 3.0).sum(), [a])

    def test_getitem_fancy_with_duplicates(self):
        a = p((4, 5), 12, "a")
        rows = np.array([0, 2, 2])
        cols = np.array([1, 3, 3])
        check_grads(lambda: (a[rows, cols] * np.array([1.0, 2.0, 4.0])).sum(), [a])


class TestNormalizers:
    def test_softmax(self):
        a = p((2, 6), 13, "a")
        w = np.random.default_rng(14).normal(size=(2, 6))
        check_grads(lambda: (ag.softmax(a, axis=-1) * w).sum(), [a])

    def test_softmax_with_mask_bias(self):
        a = p((2, 5), 15, "a")
        bias = np.array([0.0, 0.0, -1e9, 0.0, -1e9])
        w = np.random.default_rng(16).normal(size=(2, 5))
        check_grads(lambda: (ag.softmax(a + Tensor(bias), axis=-1) * w).sum(), [a])

    def test_log_softmax(self):
        a = p((3, 4), 17, "a")
        w = np.random.default_rng(18).normal(size=(3, 4))
        check_grads(lambda: (ag.log_softmax(a, axis=-1) * w).sum(), [a])

    def test_layer_norm(self):
        a = p((2, 3, 6), 19, "a")
        gain = parameter(np.random.default_rng(20).normal(1.0, 0.1, size=6), "g")
        bias = parameter(np.zeros(6), "b")
        w = np.random.default_rng(21).normal(size=(2, 3, 6))
        check_grads(lambda: (ag.layer_norm(a, gain, bias) * w).sum(), [a, gain, bias],
                    eps=1e-6, tol=5e-6)


class TestEngine:
    def test_diamond_graph_accumulates(self):
        a = parameter(np.array([2.0, -1.0]), "a")
        b = a * 3.0
        loss = (b * a).sum()  # d/da (3a^2) = 6a
        loss.backward()
        np.testing.assert_allclose(a.grad, 6.0 * a.data, atol=1e-12)

    def test_backward_requires_scalar(self):
        a = parameter(np.ones(3), "a")
        with pytest.raises(ValueError):
            (a * 2.0).backward()

    def test_no_grad_blocks_graph(self):
        a = parameter(np.ones(3), "a")
        with ag.no_grad():
            out = (a * 2.0).sum()
        assert not out.requires_grad
        assert out._backward is None

    def test_constants_get_no_grad(self):
        a = parameter(np.ones(2), "a")
        c = Tensor(np.ones(2))
        ((a + c) * c).sum().backward()
        assert c.grad is None and a.grad is not None

    def test_grad_dtype_follows_data(self):
        a = parameter(np.ones(3, dtype=np.float32), "a")
        (a * a).sum().backward()
        assert a.grad.dtype == np.float32
