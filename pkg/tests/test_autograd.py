import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from petforge import autograd as ag
from petforge.autograd import Tensor
from petforge.errors import ConfigError, ContractError, DimensionError, InputError, NumericError


def param(arr, name="p"):
    return Tensor(np.array(arr, dtype=np.float64), requires_grad=True, name=name)


def loop_matmul(a, b):
    m, k = a.shape
    _, p = b.shape
    out = np.zeros((m, p))
    for i in range(m):
        for j in range(p):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


finite = st.floats(-3, 3, allow_nan=False, width=64)


# ---------------------------------------------------------------- forward values

class TestMatmul:
    def test_identity(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(ag.matmul(Tensor(np.eye(2)), Tensor(x)).data, x)

    def test_forced_arithmetic(self):
        out = ag.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
        np.testing.assert_array_equal(out.data, [[17.0], [39.0]])

    def test_triple_loop_oracle(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        np.testing.assert_allclose((Tensor(a) @ Tensor(b)).data, loop_matmul(a, b), atol=1e-6)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(3, 4\).*\(3, 2\)"):
            Tensor(np.ones((3, 4))) @ Tensor(np.ones((3, 2)))

    def test_batched_broadcast_gradient(self):
        rng = np.random.default_rng(1)
        a = param(rng.normal(size=(2, 3, 4)), "a")
        b = param(rng.normal(size=(4, 5)), "b")
        assert ag.grad_check(lambda: ((a @ b) * (a @ b)).sum(), [a, b]) < 1e-6


class TestLayerNorm:
    def test_zero_variance(self):
        out = ag.layer_norm(Tensor([1.0, 1.0, 1.0]), Tensor(np.ones(3)), Tensor(np.zeros(3)), 1e-5)
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 0.0])

    def test_hand_computation(self):
        out = ag.layer_norm(Tensor([0.0, 2.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)
        np.testing.assert_allclose(out.data, [-1.0, 1.0])

    def test_beta_shift_on_constant(self):
        b = np.array([0.3, -2.0, 5.0])
        out = ag.layer_norm(Tensor(np.full(3, 7.0)), Tensor(np.ones(3)), Tensor(b))
        np.testing.assert_allclose(out.data, b)

    def test_empty_axis(self):
        with pytest.raises(DimensionError):
            ag.layer_norm(Tensor(np.zeros((2, 0))), Tensor(np.ones(0)), Tensor(np.zeros(0)))


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_allclose(ag.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_forced(self):
        np.testing.assert_allclose(ag.softmax(Tensor([math.log(2), 0.0])).data, [2 / 3, 1 / 3])

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)), st.floats(-100, 100))
    def test_shift_invariance_and_normalization(self, x, c):
        p = ag.softmax(Tensor(x), axis=1).data
        np.testing.assert_allclose(ag.softmax(Tensor(x + c), axis=1).data, p, atol=1e-7)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)
        assert (p >= 0).all()

    def test_bad_axis(self):
        with pytest.raises(DimensionError):
            ag.softmax(Tensor(np.zeros(3)), axis=2)


class TestActivations:
    def test_relu(self):
        np.testing.assert_array_equal(ag.activation(Tensor([-1.0, 0.0, 2.0]), "relu").data, [0, 0, 2])

    def test_sigmoid_zero(self):
        assert ag.activation(Tensor(0.0), "sigmoid").item() == 0.5

    def test_gelu_zero(self):
        assert ag.activation(Tensor(0.0), "gelu").item() == 0.0

    def test_sigmoid_extremes_are_finite(self):
        out = ag.sigmoid(Tensor([-800.0, 800.0])).data
        assert np.isfinite(out).all() and out[0] >= 0 and out[1] <= 1

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            ag.activation(Tensor(1.0), "swish")


# ---------------------------------------------------------------- backward

class TestBackward:
    def test_sum(self):
        x = param([1.0, 2.0, 3.0], "x")
        grads = ag.backward(x.sum())
        np.testing.assert_array_equal(grads["x"], [1.0, 1.0, 1.0])

    def test_square(self):
        x = param(3.0, "x")
        assert ag.backward(x * x)["x"] == 6.0

    def test_non_scalar_loss(self):
        with pytest.raises(ContractError):
            ag.backward(param([1.0, 2.0]) * 2.0)

    def test_only_tracked_leaves_get_gradients(self):
        x, c = param([1.0, 2.0], "x"), Tensor([3.0, 4.0])
        grads = ag.backward((x * c).sum())
        assert set(grads) == {"x"} and c.grad is None

    def test_shared_subexpression_visited_once(self):
        x = param(2.0, "x")
        y = x * x
        loss = y + y * y  # d/dx = 2x + 4x^3
        tape = ag.Tape(loss)
        assert len({id(n) for n in tape.nodes}) == len(tape.nodes)
        assert ag.backward(loss, tape)["x"] == pytest.approx(4 + 32)

    def test_repeat_deterministic(self):
        rng = np.random.default_rng(3)
        w = param(rng.normal(size=(4, 3)), "w")
        x = Tensor(rng.normal(size=(5, 4)))
        g1 = ag.backward(ag.tanh(x @ w).sum())["w"].copy()
        g2 = ag.backward(ag.tanh(x @ w).sum())["w"]
        np.testing.assert_array_equal(g1, g2)

    def test_forward_independent_of_tracking(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(3, 4))
        w = rng.normal(size=(4, 4))
        run = lambda t: ag.gelu(ag.layer_norm(Tensor(a) @ t, Tensor(np.ones(4)), Tensor(np.zeros(4)))).data
        np.testing.assert_array_equal(run(Tensor(w)), run(param(w)))

    def test_no_grad_records_nothing(self):
        x = param([1.0])
        with ag.no_grad():
            y = x * 2.0
        assert not y.requires_grad and y._parents == ()

    def test_composite_mlp_finite_differences(self):
        rng = np.random.default_rng(5)
        w1, b1 = param(rng.normal(size=(4, 6)), "w1"), param(rng.normal(size=6), "b1")
        w2 = param(rng.normal(size=(6, 3)), "w2")
        x = Tensor(rng.normal(size=(5, 4)))
        labels = np.array([0, 2, 1, 1, 0])

        def loss():
            return ag.cross_entropy(ag.relu(x @ w1 + b1) @ w2, labels)

        assert ag.grad_check(loss, [w1, b1, w2], step=1e-4) < 1e-3


PRIMITIVES = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / (b * b + 1.0),
    "exp": lambda a, b: ag.exp(a * 0.3) * b,
    "log": lambda a, b: ag.log(a * a + 1.0) + b,
    "sqrt": lambda a, b: ag.sqrt(a * a + 0.5) * b,
    "tanh": lambda a, b: ag.tanh(a) * b,
    "sigmoid": lambda a, b: ag.sigmoid(a) * b,
    "gelu": lambda a, b: ag.gelu(a) * b,
    "pow": lambda a, b: (a * a + 1.0) ** 1.5 * b,
    "softmax": lambda a, b: ag.softmax(a, axis=-1) * b,
    "log_softmax": lambda a, b: ag.log_softmax(a, axis=0) * b,
    "mean": lambda a, b: a.mean(axis=-1, keepdims=True) * b,
    "transpose": lambda a, b: a.swapaxes(0, -1).sum() * b,
    "getitem": lambda a, b: a[..., 1:] * b[..., :-1],
    "concat": lambda a, b: ag.concat([a, b], axis=0) * 1.5,
    "stack": lambda a, b: ag.stack([a, b], axis=0) * 0.5,
    "reshape": lambda a, b: a.reshape(-1) * b.reshape(-1),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
@settings(max_examples=8, deadline=None)
@given(data=st.data())
def test_primitive_gradients(name, data):
    rank = data.draw(st.integers(1, 3))
    shape = tuple(data.draw(st.lists(st.integers(1, 3), min_size=rank, max_size=rank)))
    a = param(data.draw(arrays(np.float64, shape, elements=finite)), "a")
    b = param(data.draw(arrays(np.float64, shape, elements=finite)), "b")
    weights = Tensor(np.random.default_rng(0).normal(size=PRIMITIVES[name](a, b).shape))
    assert ag.grad_check(lambda: (PRIMITIVES[name](a, b) * weights).sum(), [a, b]) < 1e-3


def test_layer_norm_gradient():
    rng = np.random.default_rng(6)
    x, g, b = param(rng.normal(size=(2, 3, 5)), "x"), param(rng.normal(size=5), "g"), param(rng.normal(size=5), "b")
    w = Tensor(rng.normal(size=(2, 3, 5)))
    assert ag.grad_check(lambda: (ag.layer_norm(x, g, b) * w).sum(), [x, g, b]) < 1e-3


def test_relu_gradient_away_from_kink():
    x = param([[-1.5, 0.7], [2.0, -0.3]], "x")
    assert ag.grad_check(lambda: (ag.relu(x) * Tensor([[1.0, 2.0], [3.0, 4.0]])).sum(), [x]) < 1e-6


@pytest.mark.parametrize("kernel,stride,dilation", [(3, 1, 1), (4, 2, 1), (3, 1, 2), (2, 3, 1)])
def test_unfold_matches_direct_convolution(kernel, stride, dilation):
    rng = np.random.default_rng(7)
    x = rng.normal(size=(2, 11, 3))
    w = rng.normal(size=(kernel, 3, 4))
    out = (ag.unfold1d(Tensor(x), kernel, stride, dilation) @ Tensor(w.reshape(-1, 4))).data
    t = (11 - dilation * (kernel - 1) - 1) // stride + 1
    ref = np.zeros((2, t, 4))
    for i in range(t):
        for j in range(kernel):
            ref[:, i] += x[:, i * stride + j * dilation] @ w[j]
    np.testing.assert_allclose(out, ref, atol=1e-12)
    xp = param(x, "x")
    weights = Tensor(rng.normal(size=out.shape[:2] + (kernel * 3,)))
    assert ag.grad_check(lambda: (ag.unfold1d(xp, kernel, stride, dilation) * weights).sum(), [xp]) < 1e-6


def test_unfold_too_short():
    with pytest.raises(InputError):
        ag.unfold1d(Tensor(np.zeros((1, 2, 1))), 3)


class TestCrossEntropy:
    def test_uniform(self):
        assert ag.cross_entropy(Tensor(np.zeros(10)), 3).item() == pytest.approx(math.log(10))

    def test_brute_force(self):
        rng = np.random.default_rng(8)
        z = rng.normal(size=(4, 6)) * 3
        y = np.array([0, 5, 2, 2])
        p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        ref = -np.mean(np.log(p[np.arange(4), y]))
        assert ag.cross_entropy(Tensor(z), y).item() == pytest.approx(ref, abs=1e-6)

    def test_monotone_in_true_logit(self):
        losses = [ag.cross_entropy(Tensor([v, 0.0, 0.0]), 0).item() for v in np.linspace(-3, 3, 13)]
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_gradient(self):
        z = param(np.random.default_rng(9).normal(size=(3, 4)), "z")
        assert ag.grad_check(lambda: ag.cross_entropy(z, [1, 0, 3]), [z]) < 1e-6

    @pytest.mark.parametrize("label", [-1, 4, 1.5])
    def test_bad_label(self, label):
        with pytest.raises(InputError):
            ag.cross_entropy(Tensor(np.zeros(4)), np.array(label))


class TestGradCheck:
    def test_linear_model_tight(self):
        rng = np.random.default_rng(10)
        w = param(rng.normal(size=(3, 2)), "w")
        x = Tensor(rng.normal(size=(4, 3)))
        assert ag.grad_check(lambda: (x @ w).sum(), [w], step=1e-5) < 1e-6

    def test_no_params(self):
        assert ag.grad_check(lambda: Tensor(1.0), []) == 0.0

    def test_non_finite(self):
        x = param([0.0])
        with np.errstate(divide="ignore"), pytest.raises(NumericError):
            ag.grad_check(lambda: ag.log(x * 0.0).sum(), [x])

    def test_detects_wrong_gradient(self):
        x = param([1.0, 2.0], "x")

        def broken():
            out = ag._result((x.data ** 2).sum(), (x,), lambda g: (g * x.data,), "broken")
            return out

        assert ag.grad_check(broken, [x]) > 0.1

    def test_bad_step(self):
        with pytest.raises(ConfigError):
            ag.grad_check(lambda: Tensor(1.0), [param([1.0])], step=0)


def test_float32_preserved():
    x = Tensor(np.ones((2, 3), dtype=np.float32))
    y = ag.gelu(x * 2.0 + 1.0) @ Tensor(np.ones((3, 1), dtype=np.float32))
    assert y.dtype == np.float32
