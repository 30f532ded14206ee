"""Finite-difference checks for every tape primitive's vector-Jacobian product."""

import numpy as np
import pytest

from flowfact import tape
from flowfact.tape import Var


def check_vjp(f, *arrs, h=1e-6, tol=1e-6, stride=1):
    """FD-checks d(sum-like scalar f)/d(each input element)."""
    vars_ = [Var(a.copy()) for a in arrs]
    out = f(*vars_)
    tape.backward(out)
    worst = 0.0
    for ai in range(len(arrs)):
        g = vars_[ai].grad
        if g is None:
            g = np.zeros_like(arrs[ai])
        idxs = list(np.ndindex(arrs[ai].shape))[::stride]
        for idx in idxs:
            def ev(delta):
                mod = [x.copy() for x in arrs]
                mod[ai][idx] += delta
                return float(f(*[Var(x) for x in mod]).value)

            fd = (ev(h) - ev(-h)) / (2 * h)
            worst = max(worst, abs(g[idx] - fd) / max(abs(fd), 1e-8))
    assert worst < tol, f"worst rel err {worst}"


rng = np.random.default_rng(0)
A = rng.standard_normal((3, 4))
B = rng.standard_normal((3, 4))


class TestElementwise:
    def test_add_mul_sum(self):
        check_vjp(lambda x, y: tape.vsum(x * y + x - 2.0 * y), A, B)

    def test_div(self):
        check_vjp(lambda x, y: tape.vsum(x / (y * y + 1.0)), A, B)

    def test_scalar_fast_paths_preserve_dtype(self):
        x = Var(np.ones((2, 2), dtype=np.float32))
        out = 0.5 * x + 1 - x / 3
        assert out.value.dtype == np.float32
        tape.backward(tape.vsum(out))
        assert x.grad.dtype == np.float32

    def test_tanh_family(self):
        check_vjp(lambda x: tape.vsum(tape.tanh(x)), A)
        check_vjp(lambda x: tape.vsum(tape.tanh_d1(x)), A)
        check_vjp(lambda x: tape.vsum(tape.tanh_d2(x)), A)

    def test_unary_chain(self):
        check_vjp(lambda x: tape.vsum(tape.log(tape.exp(tape.sigmoid(x)) + 1.0)), A)
        check_vjp(lambda x: tape.vsum(tape.sqrt(tape.square(x) + 1.0)), A)

    def test_relu(self):
        check_vjp(lambda x: tape.vsum(tape.square(tape.relu(x))), A)

    def test_clip_passes_gradient_inside_only(self):
        x = Var(np.array([-2.0, 0.5, 2.0]))
        out = tape.vsum(tape.clip(x, -1.0, 1.0))
        tape.backward(out)
        assert np.array_equal(x.grad, [0.0, 1.0, 0.0])


class TestShapes:
    def test_matmul_2d(self):
        check_vjp(lambda x, y: tape.vsum(tape.square(x @ y)), rng.standard_normal((3, 4)), rng.standard_normal((4, 2)))

    def test_matmul_batched(self):
        check_vjp(lambda x, y: tape.vsum(x @ y), rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 4, 3)))

    def test_matmul_broadcast(self):
        check_vjp(lambda x, y: tape.vsum(tape.square(x @ y)), rng.standard_normal((4, 2)), rng.standard_normal((5, 2, 3)))

    def test_matmul_requires_2d(self):
        with pytest.raises(ValueError, match="ndim"):
            tape.matmul(Var(np.zeros(3)), Var(np.zeros((3, 2))))

    def test_concat_narrow(self):
        check_vjp(
            lambda x, y: tape.vsum(tape.square(tape.narrow(tape.concat([x, y], axis=1), 1, 2, 4))), A, B
        )

    def test_reductions_and_reshape(self):
        check_vjp(lambda x: tape.vsum(tape.square(tape.vmean(x, axis=0))), A)
        check_vjp(lambda x: tape.vsum(tape.square(tape.reshape(tape.transpose_last2(x), (4, 3)))), A)

    def test_logsumexp_softmax(self):
        check_vjp(lambda x: tape.vsum(tape.logsumexp(x, axis=-1)), A)
        check_vjp(lambda x: tape.vsum(tape.square(tape.softmax(x, axis=-1))), A)

    def test_logdet(self):
        check_vjp(lambda x: tape.vsum(tape.logdet(x @ x + 5.0 * np.eye(3))), rng.standard_normal((2, 3, 3)), tol=5e-6)


class TestConvolutions:
    def test_conv2d(self):
        x = rng.standard_normal((2, 3, 6, 6))
        w = rng.standard_normal((4, 3, 4, 4)) * 0.3
        b = rng.standard_normal(4) * 0.1
        check_vjp(lambda *a: tape.vsum(tape.square(tape.conv2d(*a, stride=2, pad=1))), x, w, b, tol=2e-5, stride=3)

    def test_conv2d_transpose(self):
        x = rng.standard_normal((2, 4, 3, 3))
        w = rng.standard_normal((4, 3, 4, 4)) * 0.3
        b = rng.standard_normal(3) * 0.1
        for op in (0, 1):
            check_vjp(
                lambda *a: tape.vsum(tape.square(tape.conv2d_transpose(*a, stride=2, pad=1, out_pad=op))),
                x, w, b, tol=2e-5, stride=3,
            )

    def test_conv_shapes(self):
        out = tape.conv2d(Var(np.zeros((1, 3, 16, 16))), Var(np.zeros((8, 3, 4, 4))), Var(np.zeros(8)))
        assert out.value.shape == (1, 8, 8, 8)
        out = tape.conv2d_transpose(Var(np.zeros((1, 8, 7, 7))), Var(np.zeros((8, 4, 4, 4))), Var(np.zeros(4)), out_pad=0)
        assert out.value.shape == (1, 4, 14, 14)
        out = tape.conv2d_transpose(Var(np.zeros((1, 8, 3, 3))), Var(np.zeros((8, 4, 4, 4))), Var(np.zeros(4)), out_pad=1)
        assert out.value.shape == (1, 4, 7, 7)

    def test_channel_mismatch(self):
        with pytest.raises(ValueError, match="channels"):
            tape.conv2d(Var(np.zeros((1, 3, 8, 8))), Var(np.zeros((4, 2, 4, 4))), Var(np.zeros(4)))


class TestStraightThrough:
    def test_forward_is_one_hot(self):
        y = tape.onehot_argmax_st(Var(np.array([[0.2, 0.5, 0.3], [0.9, 0.05, 0.05]])))
        assert np.array_equal(y.value, [[0, 1, 0], [1, 0, 0]])

    def test_gradient_passes_through(self):
        x = Var(np.array([[0.2, 0.5, 0.3]]))
        out = tape.vsum(tape.onehot_argmax_st(x) * np.array([1.0, 2.0, 3.0]))
        tape.backward(out)
        assert np.array_equal(x.grad, [[1.0, 2.0, 3.0]])


class TestBackward:
    def test_scalar_root_required(self):
        with pytest.raises(ValueError, match="scalar"):
            tape.backward(Var(np.zeros(3)))

    def test_shared_subgraph_accumulates(self):
        x = Var(np.array(3.0))
        y = x * x + x * x  # two paths into x
        tape.backward(y)
        assert np.allclose(x.grad, 12.0)
