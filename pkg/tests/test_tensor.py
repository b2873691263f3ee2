import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from autosizer import tensor as T
from autosizer.tensor import ShapeError, Tensor

from conftest import central_difference, rel_error

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def grad_check(build, *arrays, h=1e-5):
    """Compare backward() against central differences for loss = build(*tensors)."""
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    T.backward(build(*tensors))
    errs = []
    for t in tensors:
        num = central_difference(lambda: build(*[Tensor(x.data) for x in tensors]).item(), t.data, h)
        errs.append(rel_error(t.grad, num))
    return max(errs)


def weighted_sum(y, seed=0):
    w = np.random.default_rng(seed).normal(size=y.shape)
    return T.sum_(T.mul(y, w))


# ---------------------------------------------------------------- matmul


def test_matmul_identity():
    X = np.arange(6.0).reshape(2, 3)
    out = T.matmul(Tensor(np.eye(2)), Tensor(X))
    assert np.array_equal(out.data, X)


def test_matmul_hand_example():
    assert T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


@pytest.mark.parametrize("seed", range(10))
def test_matmul_gradient(seed):
    rng = np.random.default_rng(seed)
    err = grad_check(lambda a, b: T.sum_(T.matmul(a, b)), rng.normal(size=(3, 4)), rng.normal(size=(4, 2)))
    assert err < 1e-6


def test_matmul_backward_rule():
    rng = np.random.default_rng(1)
    A = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    B = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    G = rng.normal(size=(3, 2))
    T.backward(T.sum_(T.mul(T.matmul(A, B), G)))
    np.testing.assert_allclose(A.grad, G @ B.data.T, atol=1e-14)
    np.testing.assert_allclose(B.grad, A.data.T @ G, atol=1e-14)


@pytest.mark.parametrize("seed", range(10))
def test_linear_gradient(seed):
    rng = np.random.default_rng(seed)
    err = grad_check(lambda x, w, b: weighted_sum(T.linear(x, w, b)),
                     rng.normal(size=(2, 3, 4)), rng.normal(size=(5, 4)), rng.normal(size=5))
    assert err < 1e-6


# ---------------------------------------------------------------- relu


def test_relu_values():
    assert T.relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0.0, 0.0, 2.0]


def test_relu_all_negative_zero_grad():
    x = Tensor(-np.arange(1.0, 5.0), requires_grad=True)
    y = T.relu(x)
    T.backward(T.sum_(y))
    assert not y.data.any() and not x.grad.any()


def test_relu_subgradient_at_zero_is_zero():
    x = Tensor([0.0, 1.0], requires_grad=True)
    T.backward(T.sum_(T.relu(x)))
    assert x.grad.tolist() == [0.0, 1.0]


@pytest.mark.parametrize("seed", range(10))
def test_relu_gradient_away_from_kink(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=20)
    x[np.abs(x) < 1e-3] = 0.5
    assert grad_check(lambda t: weighted_sum(T.relu(t)), x) < 1e-6


# ---------------------------------------------------------------- softmax / log_softmax


def test_softmax_symmetric():
    assert T.softmax(Tensor([0.0, 0.0])).data.tolist() == [0.5, 0.5]


def test_softmax_stable_for_large_logits():
    p = T.softmax(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(p))
    assert p[0] == pytest.approx(1.0) and p[1] == pytest.approx(0.0, abs=1e-300)


@pytest.mark.parametrize("seed", range(10))
def test_softmax_jacobian(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=5)
    assert abs(T.softmax(Tensor(x)).data.sum() - 1) < 1e-12
    assert grad_check(lambda t: weighted_sum(T.softmax(t, axis=-1), seed), x) < 1e-6


@given(arrays(np.float64, st.integers(1, 12), elements=finite))
def test_softmax_sums_to_one(x):
    p = T.softmax(Tensor(x)).data
    assert abs(p.sum() - 1) <= 1e-12 and np.all(p >= 0)


@pytest.mark.parametrize("seed", range(10))
def test_log_softmax_gradient(seed):
    rng = np.random.default_rng(seed)
    assert grad_check(lambda t: weighted_sum(T.log_softmax(t, axis=-1), seed), rng.normal(size=(3, 6))) < 1e-6


# ---------------------------------------------------------------- layer norm


def test_layer_norm_constant_maps_to_zero():
    out = T.layer_norm(Tensor(np.full(4, 3.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
    assert np.array_equal(out.data, np.zeros(4))


def test_layer_norm_hand_example():
    out = T.layer_norm(Tensor([1.0, 3.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)
    assert out.data.tolist() == [-1.0, 1.0]


@pytest.mark.parametrize("seed", range(10))
def test_layer_norm_gradient(seed):
    rng = np.random.default_rng(seed)
    err = grad_check(lambda x, g, b: weighted_sum(T.layer_norm(x, g, b), seed),
                     rng.normal(size=(2, 3, 6)), rng.normal(size=6), rng.normal(size=6))
    assert err < 1e-5


# ---------------------------------------------------------------- backward contract


def test_backward_sum_gives_ones():
    W = Tensor(np.arange(4.0).reshape(2, 2), requires_grad=True)
    T.backward(T.sum_(W))
    assert np.array_equal(W.grad, np.ones((2, 2)))


def test_backward_rows_equal_x():
    x = np.array([[2.0], [-1.0], [0.5]])
    W = Tensor(np.random.default_rng(0).normal(size=(4, 3)), requires_grad=True)
    T.backward(T.sum_(T.matmul(W, Tensor(x))))
    assert np.array_equal(W.grad, np.tile(x.T, (4, 1)))


def test_backward_rejects_non_scalar():
    W = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        T.backward(T.scale(W, 2.0))


def test_gradients_accumulate_across_two_consumers():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(3, 3))
    a = Tensor(x, requires_grad=True)
    T.backward(T.add(T.sum_(T.relu(a)), T.sum_(T.mul(a, a))))
    expected = (x > 0).astype(float) + 2 * x
    np.testing.assert_allclose(a.grad, expected, atol=1e-14)


def test_backward_visits_in_reverse_execution_order():
    order = []
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = T.scale(x, 2.0)
    z = T.scale(y, 3.0)
    loss = T.sum_(z)
    for node, tag in ((y, "y"), (z, "z"), (loss, "loss")):
        inner = node._backward

        def wrapped(g, inner=inner, tag=tag):
            order.append(tag)
            inner(g)

        node._backward = wrapped
    T.backward(loss)
    assert order == ["loss", "z", "y"]


# ---------------------------------------------------------------- remaining primitives


@pytest.mark.parametrize("seed", range(10))
def test_elementwise_gradients(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4,))
    assert grad_check(lambda x, y: weighted_sum(T.add(x, y)), a, b) < 1e-6
    assert grad_check(lambda x, y: weighted_sum(T.sub(x, y)), a, b) < 1e-6
    assert grad_check(lambda x, y: weighted_sum(T.mul(x, y)), a, b) < 1e-6
    assert grad_check(lambda x: weighted_sum(T.scale(x, -2.5)), a) < 1e-6
    assert grad_check(lambda x: weighted_sum(T.log(x)), np.abs(a) + 0.5) < 1e-4
    assert grad_check(lambda x: weighted_sum(T.mean(x, axis=1)), a) < 1e-6
    assert grad_check(lambda x: T.mean(x), a) < 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_shape_op_gradients(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 3, 2))
    assert grad_check(lambda x, y: weighted_sum(T.concat([x, y], axis=-1)), a, b) < 1e-6
    assert grad_check(lambda x: weighted_sum(T.split(x, [1, 3], axis=-1)[1]), a) < 1e-6
    assert grad_check(lambda x: weighted_sum(T.transpose(x, (2, 0, 1))), a) < 1e-6
    assert grad_check(lambda x: weighted_sum(T.reshape(x, (6, 4))), a) < 1e-6
    ids = rng.integers(0, 5, (2, 3))
    assert grad_check(lambda e: weighted_sum(T.embedding(e, ids)), rng.normal(size=(5, 4))) < 1e-6


def test_embedding_rejects_out_of_range():
    with pytest.raises(IndexError):
        T.embedding(Tensor(np.zeros((3, 2))), np.array([0, 3]))


def test_dropout_modes():
    x = Tensor(np.ones((50, 40)), requires_grad=True)
    assert T.dropout(x, 0.3, None, training=False) is x
    a = T.dropout(x, 0.3, np.random.default_rng(5), training=True).data
    b = T.dropout(x, 0.3, np.random.default_rng(5), training=True).data
    assert np.array_equal(a, b)
    assert set(np.unique(a)) <= {0.0, 1 / 0.7}
    assert abs((a == 0).mean() - 0.3) < 0.05


def test_dropout_gradient_uses_same_mask():
    x = Tensor(np.random.default_rng(0).normal(size=(4, 5)), requires_grad=True)
    y = T.dropout(x, 0.5, np.random.default_rng(1), training=True)
    T.backward(T.sum_(y))
    np.testing.assert_array_equal(x.grad, (y.data != 0) / 0.5)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_forward_is_deterministic(seed):
    rng = np.random.default_rng(seed)
    x, w = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))

    def run():
        h = T.relu(T.linear(Tensor(x), Tensor(w)))
        return T.dropout(h, 0.2, np.random.default_rng(seed), training=True).data

    assert np.array_equal(run(), run())


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with T.no_grad():
        y = T.scale(x, 2.0)
    assert not y.requires_grad and y._parents == ()


def test_linear_with_zero_width_input():
    x = Tensor(np.zeros((2, 3, 0)), requires_grad=True)
    w = Tensor(np.zeros((4, 0)), requires_grad=True)
    b = Tensor(np.arange(4.0), requires_grad=True)
    y = T.linear(x, w, b)
    assert np.array_equal(y.data, np.broadcast_to(np.arange(4.0), (2, 3, 4)))
    T.backward(T.sum_(y))
    assert x.grad.shape == (2, 3, 0) and b.grad.tolist() == [6.0] * 4
