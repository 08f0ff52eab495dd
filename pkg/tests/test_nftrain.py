import math

import numpy as np
import pytest

from nfad.flows import FlowStack
from nfad.gradnet import grad_check
from nfad.ndmath import RngState
from nfad.nftrain import NfTrainConfig, jac_reg, jac_reg_at, lambda_at, nll_loss, objective, train_flow

from oracles import random_stack


def test_identity_nll_is_gaussian_nll():
    stack = FlowStack.build(2, n_layers=3, hidden=(4,))
    x = RngState(0).normal((50, 2))
    loss, grads = nll_loss(stack, x)
    assert loss == pytest.approx(math.log(2 * math.pi) + 0.5 * np.mean(np.sum(x * x, axis=1)), rel=1e-12)
    assert len(grads) == len(stack.params)


def test_identity_jac_reg_is_zero():
    stack = FlowStack.build(3, n_layers=2, kind="affine", hidden=(4,))
    value, grads = jac_reg(stack, 64, RngState(1))
    assert value == 0.0


@pytest.mark.parametrize("kind", ["rqs", "affine", "mixed"])
def test_nll_and_penalty_gradients(kind):
    stack = random_stack(2, RngState(2), n_layers=2, hidden=(4,), kind=kind)
    x = RngState(3).normal((8, 2))
    z = RngState(4).normal((8, 2))
    assert grad_check(stack.params, lambda: nll_loss(stack, x), h=1e-6).passed(1e-5)
    assert grad_check(stack.params, lambda: jac_reg_at(stack, z), h=1e-6).passed(1e-5)


def test_objective_combines_terms():
    stack = random_stack(2, RngState(5), n_layers=2, hidden=(4,))
    x = RngState(6).normal((8, 2))
    z = RngState(7).normal((8, 2))
    total, grads, nll, lj = objective(stack, x, z, 2.5)
    assert total == pytest.approx(nll_loss(stack, x)[0] + 2.5 * jac_reg_at(stack, z)[0])
    g_n = nll_loss(stack, x)[1]
    g_j = jac_reg_at(stack, z)[1]
    for g, a, b in zip(grads, g_n, g_j):
        np.testing.assert_allclose(g, a + 2.5 * b)
    total0, _, _, lj0 = objective(stack, x, z, 0.0)
    assert total0 == pytest.approx(nll)
    assert lj0 == pytest.approx(lj)


def test_lambda_ramp():
    cfg = NfTrainConfig(lambda_max=10.0, ramp_fraction=0.5)
    assert lambda_at(0, cfg, 100) == 0.0
    assert lambda_at(25, cfg, 100) == pytest.approx(5.0)
    assert lambda_at(50, cfg, 100) == 10.0
    assert lambda_at(99, cfg, 100) == 10.0
    assert lambda_at(0, NfTrainConfig(lambda_max=3.0, ramp_fraction=0.0), 100) == 3.0
    with pytest.raises(ValueError):
        lambda_at(-1, cfg, 100)


@pytest.mark.parametrize("bad", [dict(epochs=0), dict(batch_size=0), dict(lambda_max=-1.0),
                                 dict(ramp_fraction=1.5), dict(reg_samples=0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        NfTrainConfig(**bad)


def test_training_fits_shifted_gaussian():
    # 1-D data N(1, 2^2): the best achievable NLL is the entropy 0.5*log(2*pi*e*4)
    rng = RngState(8)
    x = 1.0 + 2.0 * rng.normal((2000, 1))
    stack = FlowStack.build(1, n_layers=4, kind="affine", hidden=(8,), rng=RngState(9))
    _, trace = train_flow(x, stack, NfTrainConfig(epochs=40, lambda_max=0.0, lr=1e-2, seed=1))
    entropy = 0.5 * math.log(2 * math.pi * math.e * 4.0)
    assert trace.nll[-1] < trace.nll[0]
    assert nll_loss(stack, x)[0] == pytest.approx(entropy, abs=0.05)


def test_training_is_deterministic():
    x = RngState(10).normal((300, 2)) * [1.0, 0.5]
    runs = []
    for _ in range(2):
        stack = FlowStack.build(2, n_layers=2, hidden=(8,), rng=RngState(11))
        _, trace = train_flow(x, stack, NfTrainConfig(epochs=3, seed=4))
        runs.append((trace.rows(), [p.copy() for p in stack.params]))
    assert runs[0][0] == runs[1][0]
    for a, b in zip(runs[0][1], runs[1][1]):
        assert np.array_equal(a, b)


def test_trace_csv(tmp_path):
    x = RngState(12).normal((120, 2))
    stack = FlowStack.build(2, n_layers=2, hidden=(4,), rng=RngState(0))
    _, trace = train_flow(x, stack, NfTrainConfig(epochs=2, batch_size=50))
    trace.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "epoch,nll,l_j,lambda"
    assert len(lines) == 3 and len(trace) == 2


def test_rejects_bad_data():
    stack = FlowStack.build(2, n_layers=2, hidden=(4,))
    x = np.column_stack([RngState(0).normal(10), np.ones(10)])
    with pytest.raises(ValueError, match="constant"):
        train_flow(x, stack, NfTrainConfig(epochs=1))
    with pytest.raises(ValueError):
        train_flow(np.zeros((10, 3)) + RngState(1).normal((10, 3)), stack, NfTrainConfig(epochs=1))
    with pytest.raises(ValueError):
        train_flow(np.array([[np.nan, 1.0], [0.0, 2.0]]), stack, NfTrainConfig(epochs=1))


def test_identity_nll_at_mode():
    stack = FlowStack.build(2, n_layers=2, hidden=(4,))
    assert nll_loss(stack, np.zeros((1, 2)))[0] == pytest.approx(math.log(2 * math.pi), abs=1e-15)


def test_identity_nll_is_entropy():
    stack = FlowStack.build(2, n_layers=2, hidden=(4,))
    x = RngState(13).normal((10**5, 2))
    assert nll_loss(stack, x)[0] == pytest.approx(1 + math.log(2 * math.pi), abs=0.02)


def test_constant_scale_penalty():
    from test_flows import constant_scale_stack
    stack = constant_scale_stack(0.25, d=3)
    # masks 0 and 1 over three dims scale 1 and 2 coordinates: total logdet 3 * 0.25
    value, _ = jac_reg(stack, 50, RngState(14))
    assert value == pytest.approx((3 * 0.25) ** 2, rel=1e-14)


def test_single_epoch_trace():
    x = RngState(15).normal((7, 2))
    stack = FlowStack.build(2, n_layers=1, hidden=(2,))
    _, trace = train_flow(x, stack, NfTrainConfig(epochs=1, batch_size=4))
    assert len(trace) == 1
