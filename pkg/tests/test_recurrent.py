import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from volnet import autodiff as ad
from volnet import recurrent as R
from volnet.errors import ShapeMismatch

from oracles import gru_step_loops, lstm_step_loops


def params(kind, n_in, hidden, seed=0, scale=1.0):
    p = R.init_params(kind, n_in, hidden, np.random.default_rng(seed), np.float64)
    rng = np.random.default_rng(seed + 1)
    for k, v in vars(p).items():
        v[...] = rng.standard_normal(v.shape) * scale
    return p


def step(kind, x, c, a, p):
    tape = ad.Tape()
    pn = R.param_nodes(tape, p)
    st_ = R.RNNState(tape.constant(c), tape.constant(a))
    out = R.STEPS[kind](tape.constant(x), st_, pn)
    return out.c.data, out.a.data


@given(st.integers(0, 2**31))
def test_gru_matches_scalar_oracle(seed):
    r = np.random.default_rng(seed)
    p = params("gru", 2, 3, seed % 1000)
    x, c = r.standard_normal(2), r.standard_normal(3)
    got, _ = step("gru", x, c, c, p)
    np.testing.assert_allclose(got, gru_step_loops(x, c, vars(p)), rtol=0, atol=1e-12)


@given(st.integers(0, 2**31))
def test_lstm_matches_scalar_oracle(seed):
    r = np.random.default_rng(seed)
    p = params("lstm", 2, 3, seed % 1000)
    x, c, a = r.standard_normal(2), r.standard_normal(3), r.standard_normal(3)
    gc, ga = step("lstm", x, c, a, p)
    oc, oa = lstm_step_loops(x, c, a, vars(p))
    np.testing.assert_allclose(gc, oc, rtol=0, atol=1e-12)
    np.testing.assert_allclose(ga, oa, rtol=0, atol=1e-12)


def test_gru_update_gate_saturation(rng):
    p = params("gru", 2, 3)
    x, c = rng.standard_normal(2), rng.standard_normal(3)
    p.b_u[:] = 50.0
    got, _ = step("gru", x, c, c, p)
    tape = ad.Tape()
    pn = R.param_nodes(tape, p)
    cn, xn = tape.constant(c), tape.constant(x)
    r = ad.sigmoid(ad.linear(ad.concat([cn, xn]), pn.W_r, pn.b_r, layout="out_in"))
    c_tilde = np.tanh(p.W_c @ np.concatenate([r.data * c, x]) + p.b_c)
    np.testing.assert_allclose(got, c_tilde, rtol=0, atol=1e-12)
    p.b_u[:] = -50.0
    got, _ = step("gru", x, c, c, p)
    np.testing.assert_allclose(got, c, rtol=0, atol=1e-12)


def test_lstm_gate_saturation(rng):
    p = params("lstm", 2, 3)
    x, c, a = rng.standard_normal(2), rng.standard_normal(3), rng.standard_normal(3)
    p.b_f[:] = -50.0
    p.b_u[:] = -50.0
    gc, ga = step("lstm", x, c, a, p)
    np.testing.assert_allclose(gc, 0, atol=1e-12)
    np.testing.assert_allclose(ga, 0, atol=1e-12)
    p.b_f[:] = 50.0
    gc, _ = step("lstm", x, c, a, p)
    np.testing.assert_allclose(gc, c, rtol=0, atol=1e-12)


@pytest.mark.parametrize("kind", ["gru", "lstm"])
def test_single_step_sequence(kind, rng):
    p = params(kind, 4, 3)
    xs = rng.standard_normal((1, 4))
    tape = ad.Tape()
    out = R.run_sequence(kind, tape.constant(xs), R.param_nodes(tape, p))
    _, a = step(kind, xs[0], np.zeros(3), np.zeros(3), p)
    np.testing.assert_array_equal(out.data, a)


@pytest.mark.parametrize("kind", ["gru", "lstm"])
def test_sequence_is_manual_fold(kind, rng):
    p = params(kind, 4, 3)
    xs = rng.standard_normal((6, 4))
    tape = ad.Tape()
    out = R.run_sequence(kind, tape.constant(xs), R.param_nodes(tape, p))
    c, a = np.zeros(3), np.zeros(3)
    for x in xs:
        c, a = step(kind, x, c, a, p)
    np.testing.assert_array_equal(out.data, a)


def test_zero_gru_stays_zero(rng):
    p = params("gru", 4, 3, scale=0.0)
    tape = ad.Tape()
    out = R.run_sequence("gru", tape.constant(rng.standard_normal((7, 4))), R.param_nodes(tape, p))
    assert np.all(out.data == 0)


def test_full_sized_sequence_shape():
    p = R.init_params("gru", 6912, 256, np.random.default_rng(0), np.float32)
    tape = ad.Tape()
    xs = tape.constant(np.zeros((30, 6912), np.float32))
    assert R.run_sequence("gru", xs, R.param_nodes(tape, p)).shape == (256,)


def test_batched_time_axis(rng):
    p = params("lstm", 4, 3)
    xs = rng.standard_normal((2, 5, 4))
    tape = ad.Tape()
    pn = R.param_nodes(tape, p)
    both = R.run_sequence("lstm", tape.constant(xs), pn, time_axis=1).data
    one = R.run_sequence("lstm", tape.constant(xs[1]), pn).data
    np.testing.assert_allclose(both[1], one, rtol=0, atol=1e-14)


def test_width_mismatch_names_timestep():
    p = params("gru", 4, 3)
    tape = ad.Tape()
    with pytest.raises(ShapeMismatch, match="timestep 0"):
        R.run_sequence("gru", tape.constant(np.zeros((2, 5))), R.param_nodes(tape, p))


@given(st.integers(0, 2**31), st.sampled_from(["gru", "lstm"]))
def test_outputs_bounded(seed, kind):
    r = np.random.default_rng(seed)
    p = params(kind, 3, 4, seed % 997, scale=3.0)
    xs = r.standard_normal((8, 3)) * 5
    tape = ad.Tape()
    out = R.run_sequence(kind, tape.constant(xs), R.param_nodes(tape, p)).data
    assert np.max(np.abs(out)) <= 1.0


@pytest.mark.parametrize("kind", ["gru", "lstm"])
def test_unroll_gradients(kind, rng):
    p = params(kind, 3, 4, scale=0.5)
    xs = rng.standard_normal((5, 3))
    names = list(vars(p))
    arrays = [getattr(p, n) for n in names] + [xs]
    coef = rng.standard_normal(4)

    def loss(tape):
        pn = R.param_nodes(tape, p)
        x = tape.leaf(xs, trainable=True)
        return ad.sum_all(ad.mul(R.run_sequence(kind, x, pn), coef)), pn, x

    tape = ad.Tape()
    l, pn, x = loss(tape)
    g = tape.backward(l)
    analytic = [g[getattr(pn, n).id].data for n in names] + [g[x.id].data]
    err = ad.finite_diff_check(lambda _: float(loss(ad.Tape())[0].data[0]), arrays, analytic, eps=1e-6)
    assert err < 1e-4


def test_init_bounds():
    p = R.init_params("lstm", 5, 3, np.random.default_rng(0), np.float64)
    assert np.all(np.abs(p.W_o) <= 1 / np.sqrt(8)) and np.all(p.b_o == 0)
    assert R.hidden_size(p) == 3 and R.input_size(p) == 5
