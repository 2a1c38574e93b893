"""Autodiff core: op semantics and gradients against finite differences."""

import numpy as np
import pytest

from oracles import fd_relative_errors
from rdfewshot.exceptions import StateError
from rdfewshot.nn import tensor as T
from rdfewshot.nn.tensor import Tensor, no_grad


def leaf(rng, shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


class TestForwardSemantics:
    def test_add_mul_broadcast(self, rng):
        a = Tensor(rng.random((3, 4)))
        b = Tensor(rng.random(4))
        assert np.allclose(T.add(a, b).data, a.data + b.data)
        assert np.allclose(T.mul(a, b).data, a.data * b.data)

    def test_relu(self):
        out = T.relu(Tensor(np.array([-1.0, 0.0, 2.0])))
        assert np.array_equal(out.data, [0.0, 0.0, 2.0])

    def test_matmul(self, rng):
        a, b = Tensor(rng.random((3, 5))), Tensor(rng.random((5, 2)))
        assert np.allclose(T.matmul(a, b).data, a.data @ b.data)

    def test_reductions(self, rng):
        x = Tensor(rng.random((4, 6)))
        assert np.allclose(x.sum(axis=1).data, x.data.sum(axis=1))
        assert np.allclose(x.mean(axis=(0, 1)).data, x.data.mean())

    def test_concat_and_getitem(self, rng):
        a, b = Tensor(rng.random((2, 3))), Tensor(rng.random((4, 3)))
        cat = T.concat([a, b], axis=0)
        assert cat.data.shape == (6, 3)
        assert np.allclose(cat[2:].data, b.data)


class TestBackward:
    def test_linear_layer_grad_exact(self, rng):
        # y = W x, loss = sum(y): dL/dW = x broadcast to each row
        w = leaf(rng, (3, 5))
        x = Tensor(rng.standard_normal((5, 1)))
        loss = T.matmul(w, x).sum()
        loss.backward()
        assert np.allclose(w.grad, np.tile(x.data.T, (3, 1)))

    def test_grad_accumulates_across_uses(self, rng):
        x = leaf(rng, (4,))
        loss = T.add(T.mul(x, 2.0), T.mul(x, 3.0)).sum()
        loss.backward()
        assert np.allclose(x.grad, 5.0)

    def test_shared_gradient_arrays_do_not_alias(self, rng):
        # add backward hands the same array to both parents; accumulation
        # into one must not corrupt the other
        x = leaf(rng, (4,))
        y = leaf(rng, (4,))
        s = T.add(x, y)
        loss = T.add(s.sum(), T.mul(x, 1.0).sum())
        loss.backward()
        assert np.allclose(y.grad, 1.0)
        assert np.allclose(x.grad, 2.0)

    def test_backward_without_graph_raises(self):
        with pytest.raises(StateError):
            Tensor(np.ones(3)).backward()

    def test_backward_nonscalar_needs_grad(self, rng):
        x = leaf(rng, (3,))
        y = T.mul(x, 2.0)
        with pytest.raises(StateError):
            y.backward()

    def test_no_grad_suppresses_graph(self, rng):
        x = leaf(rng, (3,))
        with no_grad():
            y = T.mul(x, 2.0)
        assert not y.requires_grad

    @pytest.mark.parametrize("op,shapes", [
        ("add", ((3, 4), (3, 4))),
        ("add_broadcast", ((3, 4), (4,))),
        ("mul", ((3, 4), (3, 4))),
        ("mul_broadcast", ((2, 5), (1, 5))),
        ("sub", ((4,), (4,))),
        ("div", ((3, 3), (3, 3))),
        ("matmul", ((3, 4), (4, 2))),
    ])
    def test_binary_op_gradients(self, rng, op, shapes):
        a, b = leaf(rng, shapes[0]), leaf(rng, shapes[1])
        if op == "div":
            b.data = np.abs(b.data) + 0.5
        fn = {"add": T.add, "add_broadcast": T.add, "mul": T.mul,
              "mul_broadcast": T.mul, "sub": T.sub, "div": T.div,
              "matmul": T.matmul}[op]
        weight = Tensor(rng.standard_normal(fn(a, b).data.shape))

        def make_loss():
            return T.mul(fn(a, b), weight).sum()
        loss = make_loss()
        loss.backward()
        assert fd_relative_errors(make_loss, [a, b]) < 1e-6

    @pytest.mark.parametrize("unary", ["relu", "sigmoid", "exp", "log", "sqrt"])
    def test_unary_op_gradients(self, rng, unary):
        x = leaf(rng, (4, 3))
        if unary in ("log", "sqrt"):
            x.data = np.abs(x.data) + 0.5
        if unary == "relu":
            x.data = x.data + np.sign(x.data) * 0.05  # keep away from the kink
        fn = {"relu": T.relu, "sigmoid": T.sigmoid, "exp": T.texp,
              "log": T.tlog, "sqrt": T.tsqrt}[unary]
        weight = Tensor(rng.standard_normal(x.data.shape))

        def make_loss():
            return T.mul(fn(x), weight).sum()
        make_loss().backward()
        assert fd_relative_errors(make_loss, [x]) < 1e-6

    def test_reshape_transpose_getitem_concat_gradients(self, rng):
        a = leaf(rng, (4, 6))
        b = leaf(rng, (2, 6))
        weight = Tensor(rng.standard_normal((6, 6)))

        def make_loss():
            cat = T.concat([a, b], axis=0)
            took = cat[1:5]
            back = T.transpose(T.reshape(took, (2, 12)), (1, 0))
            return T.mul(T.reshape(back, (6, 4)).sum(axis=1), weight.sum(axis=1)).sum()
        make_loss().backward()
        assert fd_relative_errors(make_loss, [a, b]) < 1e-6

    def test_sum_mean_keepdims_gradients(self, rng):
        x = leaf(rng, (3, 4, 2))
        w = Tensor(rng.standard_normal((3, 1, 2)))

        def make_loss():
            return T.mul(x.sum(axis=1, keepdims=True), w).mean()
        make_loss().backward()
        assert fd_relative_errors(make_loss, [x]) < 1e-6


class TestFiniteChecks:
    def test_flag_catches_nan(self):
        T.set_finite_checks(True)
        try:
            with pytest.raises(FloatingPointError):
                T.tlog(Tensor(np.array([-1.0])))
        finally:
            T.set_finite_checks(False)
