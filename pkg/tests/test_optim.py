import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmgr.errors import ParameterError, ShapeError
from mmgr.layers import LayerSpec, Network, NetworkConfig
from mmgr.optim import (SGD, EpochStats, OptimizerState, clip_gradient, cross_entropy_batch,
                        cross_entropy_loss, format_log_line, lr_schedule, nll_batch,
                        nll_batch_loss, sgd_step, train_epoch)
from mmgr.tensor import l2_norm

from oracles import numeric_grad, rel_error


def _state(**kw):
    return OptimizerState([np.zeros(1)], **kw)


# -- losses --------------------------------------------------------------------

def test_cross_entropy_symmetric():
    loss, grad = cross_entropy_loss(np.zeros(2), 0)
    assert loss == pytest.approx(math.log(2))
    assert np.allclose(grad, [-0.5, 0.5])


def test_cross_entropy_confident():
    loss, _ = cross_entropy_loss(np.array([10.0, -10.0]), 0)
    assert loss < 1e-8


def test_cross_entropy_gradient_fd(rng):
    p = rng.standard_normal(6)
    _, g = cross_entropy_loss(p, 4)
    assert np.max(np.abs(g - numeric_grad(lambda: cross_entropy_loss(p, 4)[0], p))) < 1e-6


def test_cross_entropy_bad_label():
    with pytest.raises(ParameterError):
        cross_entropy_loss(np.zeros(3), 3)


@given(st.lists(st.floats(-30, 30), min_size=2, max_size=12), st.data())
def test_cross_entropy_gradient_sums_to_zero(p, data):
    label = data.draw(st.integers(0, len(p) - 1))
    _, g = cross_entropy_loss(np.array(p), label)
    assert abs(g.sum()) < 1e-6


def test_cross_entropy_batch_matches_rows(rng):
    logits = rng.standard_normal((4, 5))
    labels = [0, 3, 1, 4]
    loss, grad = cross_entropy_batch(logits, labels)
    rows = [cross_entropy_loss(r, y) for r, y in zip(logits, labels)]
    assert loss == pytest.approx(np.mean([r[0] for r in rows]))
    assert np.allclose(grad, np.stack([r[1] for r in rows]) / 4)


def test_nll_examples():
    assert nll_batch_loss(np.array([[0.0, 1.0]]), [1]) == 0
    assert nll_batch_loss(np.array([[0.5, 0.5], [0.5, 0.5]]), [0, 1]) == pytest.approx(math.log(2))
    assert nll_batch_loss(np.full((3, 7), 1 / 7), [0, 3, 6]) == pytest.approx(math.log(7))


def test_nll_clamps_zero_probability(caplog):
    with caplog.at_level(logging.WARNING):
        loss = nll_batch_loss(np.array([[1.0, 0.0]]), [1])
    assert loss == pytest.approx(-math.log(1e-12))
    assert "clamped" in caplog.text


def test_nll_rejects_unnormalised():
    with pytest.raises(ParameterError):
        nll_batch_loss(np.array([[0.5, 0.6]]), [0])


def test_nll_batch_gradient_fd(f64, rng):
    z = rng.standard_normal((3, 4))
    _, g = nll_batch(z, [1, 0, 3])
    assert rel_error(g, numeric_grad(lambda: nll_batch(z, [1, 0, 3])[0], z)) < 1e-6


# -- clipping ------------------------------------------------------------------

def test_clip_below_threshold_unchanged():
    g = [np.array([3.0]), np.array([4.0])]
    clip_gradient(g, 10)
    assert g[0][0] == 3 and g[1][0] == 4


def test_clip_halves_when_norm_is_twice_c():
    g = [np.array([12.0]), np.array([16.0])]
    clip_gradient(g, 10)
    assert np.allclose([g[0][0], g[1][0]], [6.0, 8.0])


@given(st.integers(0, 2 ** 31), st.floats(0.01, 100))
def test_clip_norm_and_idempotence(seed, c):
    r = np.random.default_rng(seed)
    g = [r.standard_normal(r.integers(1, 6, 2)) * r.uniform(0, 20) for _ in range(3)]
    before = math.sqrt(sum(l2_norm(x) ** 2 for x in g))
    clip_gradient(g, c)
    after = math.sqrt(sum(l2_norm(x) ** 2 for x in g))
    assert after == pytest.approx(min(before, c), rel=1e-6, abs=1e-12)
    once = [x.copy() for x in g]
    clip_gradient(g, c)
    assert all(np.allclose(a, b, rtol=1e-12) for a, b in zip(g, once))


def test_clip_rejects_nonpositive():
    with pytest.raises(ParameterError):
        clip_gradient([np.ones(1)], 0)


# -- update rule ---------------------------------------------------------------

def test_sgd_plain():
    theta, st_ = np.array([1.0]), _state(momentum=0.0, base_lr=0.1)
    sgd_step([theta], [np.array([0.5])], st_)
    assert abs(st_.velocities[0][0] + 0.05) < 1e-12
    assert abs(theta[0] - 0.95) < 1e-12
    assert st_.iteration == 1


def test_sgd_momentum_coast():
    theta = np.array([2.0])
    st_ = OptimizerState([np.array([-0.1])], momentum=0.9, base_lr=0.37)
    sgd_step([theta], [np.zeros(1)], st_)
    assert abs(st_.velocities[0][0] + 0.09) < 1e-12
    assert abs(theta[0] - 1.91) < 1e-12


def test_sgd_decay_only():
    theta, st_ = np.array([1.0]), _state(momentum=0.0, base_lr=0.1, weight_decay=0.1)
    sgd_step([theta], [np.zeros(1)], st_)
    assert abs(theta[0] - 0.99) < 1e-12


def test_sgd_decay_mask_skips():
    theta, st_ = np.array([1.0]), _state(momentum=0.0, base_lr=0.1, weight_decay=0.1)
    sgd_step([theta], [np.zeros(1)], st_, decay_mask=[False])
    assert theta[0] == 1.0


@given(st.integers(0, 2 ** 31), st.floats(0.001, 1.0))
def test_sgd_without_momentum_or_decay_is_plain_descent(seed, lr):
    r = np.random.default_rng(seed)
    theta, g = r.standard_normal(5), r.standard_normal(5)
    expected = theta - lr * g
    s = OptimizerState([np.zeros(5)], momentum=0.0, base_lr=lr)
    sgd_step([theta], [g], s)
    assert np.array_equal(theta, expected)


@given(st.integers(0, 2 ** 31), st.floats(0.0, 0.99))
def test_velocity_is_linear_in_gradient(seed, mu):
    r = np.random.default_rng(seed)
    v0, g = r.standard_normal(4), r.standard_normal(4)
    deltas = []
    for scale in (1.0, 2.0):
        s = OptimizerState([v0.copy()], momentum=mu, base_lr=0.1)
        sgd_step([np.zeros(4)], [scale * g], s)
        deltas.append(s.velocities[0] - mu * v0)
    assert np.allclose(deltas[1], 2 * deltas[0], rtol=1e-9, atol=1e-12)


def test_sgd_shape_mismatch():
    with pytest.raises(ShapeError):
        sgd_step([np.zeros(2)], [np.zeros(3)], OptimizerState([np.zeros(2)]))


@pytest.mark.parametrize("kw", [dict(momentum=1.0), dict(base_lr=-1), dict(clip=0),
                                dict(weight_decay=-0.1), dict(step_interval=0)])
def test_optimizer_state_validation(kw):
    with pytest.raises(ParameterError):
        _state(**kw)


@pytest.mark.parametrize("it,lr", [(0, 0.1), (1499, 0.1), (1500, 0.01), (3000, 0.001)])
def test_lr_schedule(it, lr):
    assert lr_schedule(_state(base_lr=0.1, step_interval=1500), it) == pytest.approx(lr)


def test_sgd_object_applies_schedule_and_clip():
    net = Network(NetworkConfig([LayerSpec("fully_connected", out_channels=2)], (2,), 2))
    opt = SGD(net.parameters(), lr=1.0, momentum=0.0, clip=1.0, step_interval=2)
    w = net.parameters()[0]
    before = w.value.copy()
    w.grad[...] = 100.0
    opt.step()
    # bias gradient is zero, so the clipped weight gradient has norm 1
    assert np.linalg.norm(before - w.value) == pytest.approx(1.0, rel=1e-5)
    opt.step()
    opt.step()
    assert opt.state.lr == pytest.approx(0.1)


# -- training loop -------------------------------------------------------------

def _tiny_net(seed=0):
    return Network(NetworkConfig([LayerSpec("fully_connected", out_channels=3)], (4,), 3), seed=seed)


def _toy_data(rng, n=12):
    return [(rng.standard_normal(4).astype(np.float32), int(i % 3)) for i in range(n)]


def test_zero_lr_leaves_parameters_bit_identical(rng):
    net = _tiny_net()
    before = [p.value.copy() for p in net.parameters()]
    train_epoch(net, _toy_data(rng), SGD(net.parameters(), lr=0.0), batch_size=4)
    assert all(np.array_equal(a, p.value) for a, p in zip(before, net.parameters()))


def test_single_sample_overfits(rng):
    net = _tiny_net()
    opt = SGD(net.parameters(), lr=0.5, momentum=0.0)
    data = _toy_data(rng, 1)
    losses = [train_epoch(net, data, opt, 1).loss for _ in range(200)]
    assert losses[-1] < 0.01
    assert losses[-1] < losses[0]


def test_training_is_reproducible():
    finals = []
    for _ in range(2):
        net = _tiny_net(seed=4)
        opt = SGD(net.parameters(), lr=0.1, weight_decay=1e-3)
        data = _toy_data(np.random.default_rng(0))
        r = np.random.default_rng(9)
        for _ in range(2):
            train_epoch(net, data, opt, 5, r)
        finals.append(b"".join(p.value.tobytes() for p in net.parameters()))
    assert finals[0] == finals[1]


def test_train_epoch_validation():
    net = _tiny_net()
    with pytest.raises(ParameterError):
        train_epoch(net, [], SGD(net.parameters()))


def test_train_epoch_reports_batch_on_shape_error():
    net = _tiny_net()
    with pytest.raises(ShapeError, match="batch 0"):
        train_epoch(net, [(np.zeros(5), 0)], SGD(net.parameters()))


def test_log_line_format():
    line = format_log_line(3, EpochStats(0.25, 0.5, 0.01, 4))
    assert line == "epoch=3 loss=0.250000 acc=0.500000 lr=0.01"
