import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from volnet import autodiff as ad
from volnet.errors import NonDeterministicFunction, NonScalarLoss, UnknownInput


def test_record_add_and_ids():
    tape = ad.Tape()
    a = tape.leaf(np.array([1.0]), trainable=True)
    b = tape.leaf(np.array([2.0]), trainable=True)
    c = ad.add(a, b)
    assert c.input_ids == (a.id, b.id) or list(c.input_ids) == [a.id, b.id]
    assert [n.id for n in tape.nodes] == [0, 1, 2]


def test_foreign_node_rejected():
    t1, t2 = ad.Tape(), ad.Tape()
    a = t1.leaf(np.ones(2))
    b = t2.leaf(np.ones(2))
    with pytest.raises(UnknownInput):
        ad.add(a, b)


@given(st.lists(st.integers(1, 4), min_size=1, max_size=4))
def test_sum_gives_ones(shape):
    tape = ad.Tape()
    x = tape.leaf(np.random.default_rng(0).standard_normal(shape), trainable=True)
    g = tape.backward(ad.sum_all(x))
    np.testing.assert_array_equal(g[x.id].data, np.ones(shape))


def test_sigmoid_gradient_at_zero():
    tape = ad.Tape()
    w = tape.leaf(np.array([[0.0]]), trainable=True)
    x = tape.constant(np.array([[1.0]]))
    loss = ad.sigmoid(ad.matmul(w, x))
    assert tape.backward(loss)[w.id].data[0, 0] == 0.25


def test_non_scalar_loss():
    tape = ad.Tape()
    x = tape.leaf(np.ones(3), trainable=True)
    with pytest.raises(NonScalarLoss):
        tape.backward(x)


def test_unreached_parameter_gets_zero():
    tape = ad.Tape()
    x = tape.leaf(np.ones(2), trainable=True)
    y = tape.leaf(np.ones(3), trainable=True)
    g = tape.backward(ad.sum_all(x))
    np.testing.assert_array_equal(g[y.id].data, np.zeros(3))


def test_accumulation_matches_hand_expansion():
    # f = sum(w*w + 3w) with w used three times; df/dw = 2w + 3
    tape = ad.Tape()
    w0 = np.array([0.5, -1.5, 2.0])
    w = tape.leaf(w0, trainable=True)
    f = ad.sum_all(ad.add(ad.mul(w, w), ad.mul(w, 3.0)))
    np.testing.assert_allclose(tape.backward(f)[w.id].data, 2 * w0 + 3, rtol=0, atol=1e-15)


def test_backward_order_reverse_ids():
    tape = ad.Tape()
    x = tape.leaf(np.array([2.0]), trainable=True)
    y = ad.exp(ad.mul(x, x))
    ids = [n.id for n in tape.nodes]
    assert ids == sorted(ids)
    g = tape.backward(ad.sum_all(y))
    np.testing.assert_allclose(g[x.id].data, 2 * 2.0 * np.exp(4.0))


def test_zero_grad_then_backward_bitwise():
    rng = np.random.default_rng(3)
    tape = ad.Tape()
    w = tape.leaf(rng.standard_normal((4, 3)), trainable=True)
    x = tape.constant(rng.standard_normal((2, 4)))
    loss = ad.mean_all(ad.tanh(ad.matmul(x, w)))
    first = tape.backward(loss)[w.id].data.copy()
    tape.zero_grad()
    tape.zero_grad()
    assert all(n.grad is None or not np.any(n.grad) for n in tape.nodes)
    np.testing.assert_array_equal(tape.backward(loss)[w.id].data, first)


def test_fd_quadratic():
    x = np.array([3.0])
    err = ad.finite_diff_check(lambda p: float(p[0][0] ** 2), [x], [np.array([6.0])], eps=1e-5)
    assert err < 1e-9
    assert x[0] == 3.0


def test_fd_constant():
    x = np.array([1.0, 2.0])
    assert ad.finite_diff_check(lambda p: 4.0, [x], [np.zeros(2)]) == 0.0


def test_fd_detects_nondeterminism():
    counter = iter(range(100))
    with pytest.raises(NonDeterministicFunction):
        ad.finite_diff_check(lambda p: float(next(counter)), [np.ones(1)], [np.zeros(1)])


def test_fd_rejects_bad_eps():
    with pytest.raises(ValueError):
        ad.finite_diff_check(lambda p: 0.0, [np.ones(1)], [np.zeros(1)], eps=0)


def _check_op(build, shapes, seed=0, eps=1e-6):
    rng = np.random.default_rng(seed)
    params = [rng.standard_normal(s) for s in shapes]

    def f(ps):
        tape = ad.Tape()
        nodes = [tape.leaf(p, trainable=True) for p in ps]
        return float(build(*nodes).data.reshape(-1)[0])

    tape = ad.Tape()
    nodes = [tape.leaf(p, trainable=True) for p in params]
    grads = tape.backward(build(*nodes))
    return ad.finite_diff_check(f, params, [grads[n.id].data for n in nodes], eps=eps)


@pytest.mark.parametrize("build,shapes", [
    (lambda a, b: ad.sum_all(ad.add(a, b)), [(3, 2), (3, 2)]),
    (lambda a, b: ad.sum_all(ad.mul(a, b)), [(4,), (4,)]),
    (lambda a, b: ad.sum_all(ad.sub(a, b)), [(4,), (4,)]),
    (lambda a, b: ad.sum_all(ad.tanh(ad.matmul(a, b))), [(3, 4), (4, 2)]),
    (lambda a: ad.sum_all(ad.sigmoid(a)), [(5,)]),
    (lambda a: ad.mean_all(ad.tanh(a)), [(2, 3)]),
    (lambda a: ad.sum_all(ad.exp(a)), [(3,)]),
    (lambda a: ad.sum_all(ad.log(ad.exp(a))), [(3,)]),
    (lambda a, b: ad.sum_all(ad.mul(ad.concat([a, b], axis=-1), ad.concat([b, a], axis=-1))), [(2, 3), (2, 3)]),
    (lambda a: ad.sum_all(ad.mul(ad.stack([ad.take(a, 1, axis=0), ad.take(a, 0, axis=0)]), a)), [(2, 3)]),
    (lambda a, w, b: ad.sum_all(ad.tanh(ad.linear(a, w, b))), [(2, 3), (3, 4), (4,)]),
    (lambda a, w, b: ad.sum_all(ad.tanh(ad.linear(a, w, b, layout="out_in"))), [(2, 3), (4, 3), (4,)]),
])
def test_op_gradients(build, shapes):
    assert _check_op(build, shapes) < 1e-4


def test_relu_gradient_away_from_kink():
    x = np.array([-1.0, -0.2, 0.3, 2.0])
    tape = ad.Tape()
    n = tape.leaf(x, trainable=True)
    g = tape.backward(ad.sum_all(ad.relu(n)))[n.id].data
    np.testing.assert_array_equal(g, [0, 0, 1, 1])


def test_relu_subgradient_zero_at_zero():
    tape = ad.Tape()
    n = tape.leaf(np.array([0.0]), trainable=True)
    assert tape.backward(ad.sum_all(ad.relu(n)))[n.id].data[0] == 0.0


def test_gradients_deterministic():
    def run():
        rng = np.random.default_rng(9)
        tape = ad.Tape()
        w = tape.leaf(rng.standard_normal((5, 5)), trainable=True)
        x = tape.constant(rng.standard_normal((3, 5)))
        return tape.backward(ad.mean_all(ad.sigmoid(ad.matmul(x, w))))[w.id].data

    np.testing.assert_array_equal(run(), run())


def test_operator_overloads():
    tape = ad.Tape()
    a = tape.leaf(np.array([2.0]), trainable=True)
    b = tape.leaf(np.array([5.0]), trainable=True)
    y = (a * b) + (a - b) + (-a)
    assert y.data[0] == 10.0 - 3.0 - 2.0
