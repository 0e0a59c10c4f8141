import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference
from sbdropout import autograd as ag
from sbdropout.autograd import BackwardError, NondeterministicFunctionError, finite_diff_check
from sbdropout.tensor import RngState, ShapeError
from sbdropout.verification import autograd_op_cases


@pytest.mark.parametrize("name", sorted(autograd_op_cases()))
@pytest.mark.parametrize("eps", [1e-4, 1e-5])
def test_op_gradients_match_finite_differences(name, eps):
    f, theta = autograd_op_cases()[name]
    report = finite_diff_check(f, theta, eps)
    assert report.max_rel_error < 1e-5, (name, report.worst_index)


def test_mse_of_identical_is_zero_with_zero_grad():
    y = ag.parameter([1.0, -2.0, 3.0])
    loss = ag.mse(y, np.array([1.0, -2.0, 3.0]))
    loss.backward()
    assert loss.item() == 0.0
    np.testing.assert_array_equal(y.grad, np.zeros(3))


def test_sum_of_squares_gradient(rng):
    w = ag.parameter(rng.normal((5,)))
    ag.sum(ag.mul(w, w)).backward()
    np.testing.assert_allclose(w.grad, 2 * w.value, rtol=0, atol=0)


def test_constant_root_leaves_grads_zero():
    w = ag.parameter([1.0, 2.0])
    root = ag.constant(3.0)
    root.backward()
    np.testing.assert_array_equal(w.grad, [0.0, 0.0])


def test_least_squares_gradient(rng):
    X, y = rng.normal((6, 3)), rng.normal((6,))
    w = ag.parameter(rng.normal((3,)))
    root = ag.sum(ag.square(ag.sub(y, ag.matmul(ag.constant(X), w))))
    root.backward()
    expected = -2 * X.T @ (y - X @ w.value)
    np.testing.assert_allclose(w.grad, expected, rtol=1e-12, atol=1e-12)


def test_softmax_cross_entropy_against_independent_differences(rng):
    logits = rng.normal((4, 3))
    labels = np.array([2, 0, 1, 1])

    def nll(flat):
        z = np.array(flat).reshape(4, 3)
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return float(-logp[np.arange(4), labels].mean())

    node = ag.parameter(logits)
    ag.softmax_cross_entropy(node, labels).backward()
    numeric = np.array(central_difference(nll, list(logits.reshape(-1)), 1e-6)).reshape(4, 3)
    rel = np.abs(node.grad - numeric) / np.maximum(1.0, np.abs(node.grad))
    assert rel.max() < 1e-6


def test_three_layer_composite(rng):
    X = rng.normal((5, 4))
    W2, W3 = rng.normal((6, 6)), rng.normal((6, 3))
    labels = np.array([0, 1, 2, 1, 0])

    def f(W1):
        h = ag.relu(ag.matmul(ag.constant(X), W1))
        h = ag.relu(ag.matmul(h, W2))
        return ag.softmax_cross_entropy(ag.matmul(h, W3), labels)

    report = finite_diff_check(f, rng.normal((4, 6)), 1e-6)
    assert report.max_rel_error < 1e-6


def test_reused_node_accumulates_both_paths(rng):
    a = ag.parameter(rng.normal((3,)))
    b = ag.scale(a, 3.0)
    root = ag.sum(ag.add(ag.mul(b, a), b))  # 3a^2 + 3a
    root.backward()
    np.testing.assert_allclose(a.grad, 6 * a.value + 3, rtol=1e-14)
    report = finite_diff_check(lambda t: ag.sum(ag.add(ag.mul(ag.scale(t, 3.0), t), ag.scale(t, 3.0))),
                               a.value)
    assert report.max_rel_error < 1e-8


def test_backward_twice_raises_until_zero_grad(rng):
    w = ag.parameter(rng.normal((3,)))
    root = ag.sum(ag.square(w))
    root.backward()
    first = w.grad.copy()
    with pytest.raises(BackwardError):
        root.backward()
    root.zero_grad()
    root.backward()
    np.testing.assert_array_equal(w.grad, first)


def test_identical_graphs_give_identical_grads(rng):
    X = rng.normal((4, 3))
    grads = []
    for _ in range(2):
        w = ag.parameter(np.arange(3.0))
        ag.mean(ag.relu(ag.matmul(ag.constant(X), w))).backward()
        grads.append(w.grad.tobytes())
    assert grads[0] == grads[1]


def test_non_scalar_root_rejected():
    with pytest.raises(BackwardError):
        ag.parameter([1.0, 2.0]).backward()


def test_root_grad_is_one():
    w = ag.parameter([1.0, 2.0])
    root = ag.sum(w)
    root.backward()
    assert root.grad == 1.0


def test_max_ties_route_to_lowest_index():
    x = ag.parameter([[1.0, 5.0, 5.0, 2.0]])
    ag.sum(ag.max_over_axis(x, axis=1)).backward()
    np.testing.assert_array_equal(x.grad, [[0.0, 1.0, 0.0, 0.0]])


def test_shape_errors():
    with pytest.raises(ShapeError):
        ag.matmul(ag.parameter(np.zeros((2, 3))), ag.parameter(np.zeros((2, 3))))
    with pytest.raises(ShapeError):
        ag.add(ag.parameter(np.zeros((2, 3))), np.zeros(2))
    with pytest.raises(ShapeError):
        ag.mse(ag.parameter(np.zeros(3)), np.zeros(2))


class TestFiniteDiffCheck:
    def test_sum_of_squares(self, rng):
        report = finite_diff_check(lambda t: ag.sum(ag.square(t)), rng.normal((4, 2)), 1e-5)
        assert report.max_rel_error < 1e-8

    def test_constant_function(self, rng):
        report = finite_diff_check(lambda t: ag.constant(2.5), rng.normal((3,)))
        np.testing.assert_array_equal(report.analytic, np.zeros(3))
        np.testing.assert_array_equal(report.numeric, np.zeros(3))

    def test_detects_unfrozen_randomness(self):
        stream = RngState(0)
        with pytest.raises(NondeterministicFunctionError):
            finite_diff_check(lambda t: ag.sum(ag.mul(t, stream.normal((2,)))), np.ones(2))

    def test_reports_worst_coordinate(self):
        wrong = np.array([1.0, 1.0, 5.0])
        report = finite_diff_check(lambda t: float(np.sum(t)), np.zeros(3), analytic=wrong)
        assert report.worst_index == (2,)
        assert report.max_rel_error == pytest.approx(4 / 5)

    def test_rejects_nonpositive_epsilon(self):
        with pytest.raises(ValueError):
            finite_diff_check(lambda t: ag.sum(t), np.ones(2), 0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_matmul_gradients_property(m, k, n, seed):
    rng = RngState(seed)
    B, C = rng.normal((k, n)), rng.normal((m, n))
    report = finite_diff_check(lambda t: ag.sum(ag.mul(ag.matmul(t, B), C)), rng.normal((m, k)), 1e-5)
    assert report.max_rel_error < 1e-5
