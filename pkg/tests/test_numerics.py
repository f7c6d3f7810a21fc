import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcevae.numerics import (
    AdamState,
    Mlp,
    NumericalError,
    Rng,
    ShapeError,
    Tape,
    adam_step,
    backward,
    gaussian_sample,
    mlp_apply,
    rbf_mmd,
)
from dcevae.numerics import autodiff as ad


# -- mlp_apply ---------------------------------------------------------------


def test_identity_layer():
    net = Mlp([2, 2], [np.eye(2)], [np.zeros(2)])
    out, _ = mlp_apply(net, np.array([[1.0, 2.0]]))
    np.testing.assert_array_equal(out.value, [[1.0, 2.0]])


def test_zero_weights_return_bias():
    net = Mlp.zeros([3, 4, 2])
    net.biases[-1][:] = [0.25, -1.5]
    out, _ = mlp_apply(net, np.random.default_rng(0).normal(size=(5, 3)))
    np.testing.assert_array_equal(out.value, np.tile([0.25, -1.5], (5, 1)))


def test_two_layer_forward_matches_hand_rolled_value():
    # value from straight-line tanh/multiply-add arithmetic on these weights
    w0 = np.array([[-0.813761913891517, -0.0015821241246831708],
                   [0.22237176008015735, -1.0325906468592578],
                   [-0.7713553015443735, 0.9381633465910277]])
    w1 = np.array([[-1.0522503924210023, -0.9068649134575454, 1.09817594773605]])
    net = Mlp([2, 3, 1], [w0, w1], [np.zeros(3), np.zeros(1)])
    out, _ = mlp_apply(net, np.array([[0.3, -0.7]]))
    assert out.value[0, 0] == pytest.approx(-1.1262578474757323, abs=1e-14)
    assert net(np.array([[0.3, -0.7]]))[0, 0] == pytest.approx(-1.1262578474757323, abs=1e-14)


def test_sigmoid_output_in_unit_interval():
    net = Mlp.init([3, 5, 2], Rng(1), "sigmoid")
    for w in net.weights:
        w *= 3.0
    out = net(Rng(2).normal((50, 3)) * 3)
    assert np.all((out > 0) & (out < 1))


def test_mlp_rejects_wrong_width():
    net = Mlp.init([3, 2], Rng(0))
    with pytest.raises(ShapeError, match="width 3"):
        mlp_apply(net, np.ones((2, 4)))
    with pytest.raises(ShapeError):
        net(np.ones((2, 4)))


def test_mlp_rejects_bad_weight_shapes():
    with pytest.raises(ShapeError):
        Mlp([2, 3], [np.zeros((2, 3))], [np.zeros(3)])
    with pytest.raises(ValueError):
        Mlp([2], [], [])


def test_mlp_dict_round_trip():
    net = Mlp.init([3, 4, 1], Rng(3), "sigmoid")
    again = Mlp.from_dict(net.to_dict())
    x = Rng(4).normal((6, 3))
    np.testing.assert_array_equal(net(x), again(x))


# -- backward ----------------------------------------------------------------


def test_half_squared_norm_gradient():
    tape = Tape()
    x = np.array([[3.0, 4.0]])
    xv = tape.watch(x)
    w = tape.constant(np.eye(2))
    loss = 0.5 * ad.sum(ad.square(xv @ w))
    grads = backward(tape, loss)
    np.testing.assert_allclose(grads[x], [[3.0, 4.0]])


def test_constant_loss_has_zero_gradient():
    tape = Tape()
    p = np.array([1.0, 2.0])
    tape.watch(p)
    loss = ad.sum(tape.constant(np.ones(3)))
    np.testing.assert_array_equal(backward(tape, loss)[p], np.zeros(2))


def test_adjoint_shape_checked():
    net = Mlp.init([2, 3], Rng(0))
    out, tape = mlp_apply(net, np.ones((4, 2)))
    with pytest.raises(ShapeError):
        backward(tape, out, np.ones((4, 2)))
    grads = backward(tape, out, np.ones((4, 3)))
    assert grads[net.weights[0]].shape == (3, 2)


def _fd_check(f, x, h=1e-4):
    tape = Tape()
    xv = tape.watch(x)
    g = tape.backward(f(xv))[x]
    num = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        fp = f(Tape().constant(x)).value
        x[i] = old - h
        fm = f(Tape().constant(x)).value
        x[i] = old
        num[i] = (fp - fm) / (2 * h)
    return g, num


UNARY = {
    "tanh": ad.tanh, "sigmoid": ad.sigmoid, "softplus": ad.softplus, "log_sigmoid": ad.log_sigmoid,
    "exp": ad.exp, "square": ad.square,
    "log": lambda v: ad.log(ad.square(v) + 1.0), "sqrt": lambda v: ad.sqrt(ad.square(v) + 0.5),
    "abs": lambda v: ad.abs(v + 10.0),
}


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(sorted(UNARY)), st.integers(0, 10_000))
def test_primitives_match_finite_differences(name, seed):
    x = Rng(seed).normal((3, 2))
    g, num = _fd_check(lambda v: ad.sum(UNARY[name](v) * np.arange(1.0, 7.0).reshape(3, 2)), x)
    np.testing.assert_allclose(g, num, rtol=1e-5, atol=1e-7)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_composite_ops_match_finite_differences(seed):
    rng = Rng(seed)
    w = rng.normal((2, 3))
    x = rng.normal((4, 2))
    idx = np.array([2, 0, 3, 3])
    mask = np.array([[True], [False], [True], [False]])

    def f(v):
        h = ad.tanh(v @ w)                       # (4, 3)
        z = ad.concat([h, ad.take_rows(v, idx)])  # (4, 5)
        z = ad.where(mask, z, ad.square(z))
        return ad.mean(ad.columns(z, 1, 4)) + ad.sum(ad.mean(z, axis=0) / (1.5 + ad.sigmoid(ad.columns(z, 0, 1))))

    g, num = _fd_check(f, x)
    np.testing.assert_allclose(g, num, rtol=1e-5, atol=1e-7)


# -- adam --------------------------------------------------------------------


def test_zero_gradient_leaves_params():
    p = np.array([1.0, -2.0])
    state = AdamState.for_params([p])
    adam_step([p], [np.zeros(2)], state)
    np.testing.assert_array_equal(p, [1.0, -2.0])
    assert state.step == 1


def test_first_step_moves_by_lr_times_sign():
    p = np.array([1.0, 1.0, 1.0])
    g = np.array([0.5, -2.0, 1e-3])
    state = AdamState.for_params([p], lr=0.01)
    adam_step([p], [g], state)
    np.testing.assert_allclose(1.0 - p, 0.01 * g / (np.abs(g) + 1e-8), atol=1e-9)


def test_quadratic_descent_matches_scalar_recurrence():
    w = np.array([0.0])
    state = AdamState.for_params([w], lr=0.1)
    for _ in range(100):
        adam_step([w], [2.0 * (w - 3.0)], state)
    # w after 100 steps of the same recurrence written out with floats
    assert w[0] == pytest.approx(2.9806554375278123, abs=1e-12)
    assert abs(w[0] - 3.0) < 0.5


def test_adam_aborts_on_nonfinite_gradient():
    p = np.zeros(2)
    state = AdamState.for_params([p])
    with pytest.raises(NumericalError, match="enc"):
        adam_step([p], [np.array([0.0, np.nan])], state, ["enc[0]"])
    np.testing.assert_array_equal(p, 0.0)


def test_adam_rejects_shape_mismatch():
    p = np.zeros(2)
    with pytest.raises(ShapeError):
        adam_step([p], [np.zeros(3)], AdamState.for_params([p]))


# -- randomness --------------------------------------------------------------


def test_same_seed_same_draws():
    np.testing.assert_array_equal(gaussian_sample(Rng(7), 100), gaussian_sample(Rng(7), 100))


def test_gaussian_moments():
    z = gaussian_sample(Rng(123), 100_000)
    assert abs(z.mean()) <= 0.02
    assert abs(z.var() - 1.0) <= 0.05


def test_gaussian_sample_rejects_empty():
    with pytest.raises(ValueError):
        gaussian_sample(Rng(0), 0)


def test_child_streams_are_distinct_and_reproducible():
    a, b = Rng(5).child(1), Rng(5).child(2)
    assert not np.array_equal(a.normal(10), b.normal(10))
    np.testing.assert_array_equal(Rng(5).child(1).normal(10), Rng(5).child(1).normal(10))


# -- mmd ---------------------------------------------------------------------


def test_mmd_of_batch_with_itself_is_zero():
    x = Rng(0).normal((50, 3))
    assert rbf_mmd(x, x, (1.0, 2.0)) == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("d", [2.0, 3.0, 5.0])
def test_two_point_masses(d):
    xs = np.zeros((10, 1))
    ys = np.full((10, 1), d)
    assert rbf_mmd(xs, ys, (1.0,)) == pytest.approx(2 * (1 - np.exp(-d**2 / 2)), abs=1e-12)


def test_mmd_same_distribution_small():
    rng = Rng(9)
    assert abs(rbf_mmd(rng.normal((512, 2)), rng.normal((512, 2)), (1.0,))) < 0.05


def test_mmd_rejects_empty_and_mismatched():
    with pytest.raises(ValueError):
        rbf_mmd(np.zeros((0, 2)), np.zeros((4, 2)))
    with pytest.raises(ShapeError):
        rbf_mmd(np.zeros((4, 2)), np.zeros((4, 3)))
