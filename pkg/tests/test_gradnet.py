import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nfad.gradnet import (DiffNet, Linear, ReLU, adam_state, adamw_state, adamw_step, bce_with_logits, grad_check,
                          rel_err, sigmoid, softplus)
from nfad.ndmath import RngState


def _net(widths, activation, seed=0):
    return DiffNet.mlp(widths, rng=RngState(seed), activation=activation)


@pytest.mark.parametrize("activation", ["relu", "tanh", "softplus"])
def test_mlp_param_gradients(activation):
    net = _net([3, 5, 4, 2], activation)
    x = RngState(1).normal((7, 3))
    R = RngState(2).normal((7, 2))

    def loss_and_grads():
        out = net.forward(x)
        grads, _ = net.backward(R)
        return float(np.sum(out * R)), grads

    report = grad_check(net.params, loss_and_grads)
    assert report.passed(1e-6), report


@pytest.mark.parametrize("activation", ["relu", "tanh", "softplus"])
def test_mlp_input_gradient(activation):
    net = _net([2, 6, 3], activation, seed=4)
    x = RngState(5).normal((4, 2))
    R = RngState(6).normal((4, 3))
    net.forward(x)
    _, gx = net.backward(R)
    h = 1e-6
    fd = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        fd[idx] = (np.sum(net.forward(xp) * R) - np.sum(net.forward(xm) * R)) / (2 * h)
    np.testing.assert_allclose(gx, fd, rtol=1e-6, atol=1e-8)


def test_zero_last_outputs_zero():
    net = DiffNet.mlp([2, 8, 8, 3], rng=RngState(0), zero_last=True)
    assert np.all(net.forward(RngState(1).normal((5, 2))) == 0.0)


def test_describe_roundtrip():
    net = _net([3, 4, 1], "tanh")
    clone = DiffNet.from_description(net.describe())
    assert clone.describe() == net.describe()
    assert [p.shape for p in clone.params] == [p.shape for p in net.params]


def test_backward_needs_forward():
    net = _net([2, 2], "relu")
    with pytest.raises(RuntimeError):
        net.backward(np.ones((1, 2)))


def test_bad_input_shape():
    with pytest.raises(ValueError):
        _net([3, 2], "relu").forward(np.ones((4, 2)))


def test_dims_must_chain():
    with pytest.raises(ValueError):
        DiffNet([Linear(2, 3), Linear(4, 1)])


class TestBce:
    def test_values(self):
        loss, _ = bce_with_logits(np.array([0.0, 0.0]), np.array([1.0, 0.0]))
        np.testing.assert_allclose(loss, [np.log(2.0)] * 2, rtol=1e-15)

    def test_large_logits_finite(self):
        loss, g = bce_with_logits(np.array([800.0, -800.0]), np.array([0.0, 1.0]))
        np.testing.assert_allclose(loss, [800.0, 800.0])
        np.testing.assert_allclose(g, [1.0, -1.0])

    @given(st.floats(-12, 12), st.sampled_from([0.0, 1.0]))
    def test_matches_naive_and_derivative(self, l, t):
        loss, g = bce_with_logits(np.array([l]), np.array([t]))
        p = 1.0 / (1.0 + np.exp(-l))
        naive = -(t * np.log(p) + (1 - t) * np.log1p(-p))
        assert loss[0] == pytest.approx(naive, rel=1e-7, abs=1e-12)
        h = 1e-6
        fd = (bce_with_logits(np.array([l + h]), np.array([t]))[0][0]
              - bce_with_logits(np.array([l - h]), np.array([t]))[0][0]) / (2 * h)
        assert g[0] == pytest.approx(fd, abs=1e-7)

    def test_softplus_sigmoid_stable(self):
        x = np.array([-1000.0, 0.0, 1000.0])
        np.testing.assert_allclose(softplus(x), [0.0, np.log(2.0), 1000.0])
        np.testing.assert_allclose(sigmoid(x), [0.0, 0.5, 1.0])


class TestAdamW:
    def test_first_step_by_hand(self):
        p = [np.array([1.0])]
        adamw_step(p, [np.array([0.5])], adamw_state(lr=0.1, weight_decay=0.01))
        # decay 1 - 0.1*0.01, then bias-corrected m/sqrt(v) = 1
        assert p[0][0] == pytest.approx(0.999 - 0.1 * 0.5 / (0.5 + 1e-8), abs=1e-15)

    def test_two_steps_by_hand(self):
        p = [np.array([0.0])]
        state = adam_state(lr=0.01)
        adamw_step(p, [np.array([1.0])], state)
        adamw_step(p, [np.array([-1.0])], state)
        m = 0.9 * 0.1 - 0.1
        v = 0.999 * 0.001 + 0.001
        step2 = 0.01 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
        assert p[0][0] == pytest.approx(-0.01 / (1 + 1e-8) - step2, abs=1e-15)

    def test_minimizes_quadratic(self):
        target = np.array([3.0, -2.0])
        p = [np.zeros(2)]
        state = adam_state(lr=0.05)
        for _ in range(2000):
            adamw_step(p, [2 * (p[0] - target)], state)
        np.testing.assert_allclose(p[0], target, atol=1e-3)

    def test_non_finite_gradient_raises(self):
        p = [np.zeros(2)]
        with pytest.raises(FloatingPointError):
            adamw_step(p, [np.array([np.nan, 0.0])], adam_state())
        assert np.all(p[0] == 0.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adamw_step([np.zeros(2)], [np.zeros(3)], adam_state())


def test_grad_check_detects_wrong_gradient():
    p = [np.array([1.0, 2.0])]
    report = grad_check(p, lambda: (float(np.sum(p[0] ** 2)), [3 * p[0]]))
    assert not report.passed(1e-4)
    assert report.max_rel_err == pytest.approx(1 / 3, rel=1e-6)


def test_rel_err_floor():
    assert rel_err(0.0, 0.0) == 0.0
    assert rel_err(1e-12, 0.0, floor=1e-6) == pytest.approx(1e-6)


def test_identity_linear_layer():
    net = DiffNet([Linear(3, 3, weight=np.eye(3))])
    x = RngState(0).normal((4, 3))
    np.testing.assert_array_equal(net.forward(x), x)


def test_two_layer_by_hand():
    W1 = np.array([[1.0, -1.0], [2.0, 0.5]])
    b1 = np.array([0.5, -0.5])
    W2 = np.array([[1.0], [3.0]])
    b2 = np.array([0.25])
    net = DiffNet.from_description([[2, 2], "relu", [2, 1]])
    for p, v in zip(net.params, (W1, b1, W2, b2)):
        p[...] = v
    # x = (1, 2): pre = (1*1 + 2*2 + 0.5, 1*-1 + 2*0.5 - 0.5) = (5.5, -0.5) -> relu (5.5, 0) -> 5.5 + 0.25
    assert net.forward(np.array([[1.0, 2.0]]))[0, 0] == 5.75
    grads, gx = net.backward(np.array([[1.0]]))
    np.testing.assert_array_equal(grads[0], [[1.0, 0.0], [2.0, 0.0]])
    np.testing.assert_array_equal(grads[1], [1.0, 0.0])
    np.testing.assert_array_equal(grads[2], [[5.5], [0.0]])
    np.testing.assert_array_equal(gx, [[1.0, 2.0]])


def test_zero_upstream_gives_zero_gradients():
    net = _net([3, 4, 2], "tanh")
    net.forward(RngState(1).normal((5, 3)))
    grads, gx = net.backward(np.zeros((5, 2)))
    assert all(np.all(g == 0) for g in grads) and np.all(gx == 0)


def test_relu_subgradient_away_from_kink():
    net = DiffNet([Linear(2, 2, weight=np.eye(2)), ReLU()])
    x = np.array([[0.5, -0.5]])
    net.forward(x)
    _, gx = net.backward(np.ones((1, 2)))
    np.testing.assert_array_equal(gx, [[1.0, 0.0]])


class TestAdamWClosedForms:
    def test_zero_grad_no_decay(self):
        p = [np.array([1.0, -2.0])]
        adamw_step(p, [np.zeros(2)], adam_state())
        np.testing.assert_array_equal(p[0], [1.0, -2.0])

    def test_zero_grad_decay_only(self):
        p = [np.array([1.0, -2.0])]
        adamw_step(p, [np.zeros(2)], adamw_state(lr=1e-3, weight_decay=0.01))
        np.testing.assert_array_equal(p[0], np.array([1.0, -2.0]) * (1 - 1e-5))

    @pytest.mark.parametrize("g", [3.0, -0.02, 1e3])
    def test_first_step_is_sign(self, g):
        p = [np.array([0.0])]
        adamw_step(p, [np.array([g])], adam_state(lr=1e-3))
        assert abs(p[0][0] + 1e-3 * np.sign(g)) <= 1e-3 * 1e-8 / abs(g) + 1e-18


def test_grad_check_linear_bce():
    net = DiffNet.mlp([3, 1], rng=RngState(2))
    X = RngState(3).normal((10, 3))
    t = (RngState(4).uniform(10) < 0.5).astype(float)

    def loss_and_grads():
        l, dl = bce_with_logits(net.forward(X)[:, 0], t)
        grads, _ = net.backward(dl[:, None] / len(t))
        return float(l.mean()), grads

    assert grad_check(net.params, loss_and_grads).passed(1e-5)


def test_identity_net_quadratic():
    net = DiffNet([Linear(2, 2, weight=np.eye(2))])
    x = np.array([[0.5, -1.0]])
    target = np.array([[2.0, 1.0]])
    out = net.forward(x)
    _, gx = net.backward(2 * (out - target))
    np.testing.assert_array_equal(gx, 2 * (x - target))


@pytest.mark.parametrize("seed", range(5))
def test_random_three_layer_nets(seed):
    net = DiffNet.mlp([4, 6, 5, 3], rng=RngState(seed), activation="tanh")
    X = RngState(seed + 10).normal((6, 4))
    R = RngState(seed + 20).normal((6, 3))

    def loss_and_grads():
        out = net.forward(X)
        return float(np.sum(np.sin(out) * R)), net.backward(np.cos(out) * R)[0]

    assert grad_check(net.params, loss_and_grads).passed(1e-4)
