import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import away_from_kinks

from cgain.errors import ConfigError, NumericError, ShapeError, StateError
from cgain.losses import classification_loss_and_grad
from cgain.nn import (
    PROB_FLOOR,
    Adam,
    Network,
    NetworkSpec,
    dumps_network,
    finite_difference,
    grad_check,
    load_network,
    max_relative_error,
    save_network,
)


def small_net(seed=0, d=4, out=1, dropout=0.0, bn=True):
    return Network(NetworkSpec(d, 8, 6, out, dropout, bn), rng=seed)


def test_spec_rejects_bad_dims():
    with pytest.raises(ConfigError):
        NetworkSpec(0, 4, 4, 1)
    with pytest.raises(ConfigError):
        NetworkSpec(3, 4, 4, 1, dropout_rate=1.0)


def test_zero_weights_give_half():
    net = small_net().zero_()
    net.params["bn_gamma"][:] = 1.0
    x = np.random.default_rng(1).normal(size=(5, 4))
    out, _ = net.forward(x, training=True, update_stats=False)
    assert np.all(out == 0.5)


def test_negative_preactivations_are_clamped_by_relu():
    net = small_net(bn=False)
    net.params["W1"][:] = -1.0
    net.params["b1"][:] = -0.5
    _, cache = net.forward(np.abs(np.random.default_rng(0).normal(size=(3, 4))), training=False)
    assert np.all(cache.h1 == 0.0)


def test_hand_computed_2_2_2_1_net():
    net = Network(NetworkSpec(2, 2, 2, 1, 0.0, use_input_batchnorm=False), rng=0)
    net.params["W1"] = np.array([[0.5, -1.0], [0.25, 2.0]])
    net.params["b1"] = np.array([0.1, -0.2])
    net.params["W2"] = np.array([[1.5, -0.5], [-0.75, 1.0]])
    net.params["b2"] = np.array([0.0, 0.3])
    net.params["W3"] = np.array([[0.8], [-1.2]])
    net.params["b3"] = np.array([0.05])
    x = np.array([[0.4, 0.6]])
    # layer by layer, written out by hand
    z1 = [0.4 * 0.5 + 0.6 * 0.25 + 0.1, 0.4 * -1.0 + 0.6 * 2.0 - 0.2]
    h1 = [max(v, 0.0) for v in z1]
    z2 = [h1[0] * 1.5 + h1[1] * -0.75, h1[0] * -0.5 + h1[1] * 1.0 + 0.3]
    h2 = [max(v, 0.0) for v in z2]
    z3 = h2[0] * 0.8 + h2[1] * -1.2 + 0.05
    expected = 1.0 / (1.0 + np.exp(-z3))
    assert abs(net(x)[0, 0] - expected) < 1e-12


def test_forward_errors():
    net = small_net(dropout=0.2)
    with pytest.raises(ShapeError):
        net.forward(np.zeros((2, 3)))
    bad = np.zeros((2, 4))
    bad[0, 1] = np.nan
    with pytest.raises(NumericError):
        net.forward(bad, training=False)
    with pytest.raises(StateError):
        net.forward(np.zeros((2, 4)), training=True)


def test_inference_is_deterministic():
    net = small_net(dropout=0.3)
    x = np.random.default_rng(2).normal(size=(7, 4))
    assert np.array_equal(net.eval()(x), net(x))


def test_batchnorm_normalizes_in_training():
    net = small_net()
    x = np.random.default_rng(3).normal(3.0, 5.0, size=(64, 4))
    _, cache = net.forward(x, training=True)
    assert np.allclose(cache.xhat.mean(axis=0), 0.0, atol=1e-6)
    assert np.allclose(cache.xhat.var(axis=0), 1.0, atol=1e-6)


def test_running_stats_move_toward_batch_stats():
    net = small_net()
    x = np.random.default_rng(4).normal(3.0, 2.0, size=(32, 4))
    net.forward(x, training=True)
    assert np.allclose(net.running_mean, 0.1 * x.mean(axis=0))
    before = net.running_mean.copy()
    net.forward(x, training=True, update_stats=False)
    assert np.array_equal(before, net.running_mean)
    assert np.all(net.running_var > 0)


def test_outputs_strictly_inside_unit_interval():
    net = small_net(bn=False)
    net.params["b3"][:] = 1e3
    assert np.all(net(np.zeros((2, 4))) <= 1.0 - PROB_FLOOR)
    net.params["b3"][:] = -1e3
    assert np.all(net(np.zeros((2, 4))) >= PROB_FLOOR)


def test_zero_output_grad_gives_zero_grads():
    net = small_net(dropout=0.2)
    out, cache = net.forward(np.random.default_rng(0).normal(size=(5, 4)), rng=1, training=True)
    grads, dx = net.backward(cache, np.zeros_like(out))
    assert all(not g.any() for g in grads.values())
    assert not dx.any()
    assert {k: g.shape for k, g in grads.items()} == {k: v.shape for k, v in net.params.items()}


def test_stale_cache_rejected():
    net = small_net()
    out, cache = net.forward(np.ones((3, 4)) * np.arange(3)[:, None], training=True)
    net.touch()
    with pytest.raises(StateError):
        net.backward(cache, np.ones_like(out))
    other = small_net(seed=1)
    out, cache = net.forward(np.arange(12.0).reshape(3, 4), training=True)
    with pytest.raises(StateError):
        other.backward(cache, np.ones_like(out))


def test_output_layer_weight_gradient_by_hand():
    # With unit upstream gradient, dL/dW3 = sum_i h2_i * p_i (1 - p_i).
    net = small_net(bn=False)
    x = np.random.default_rng(5).normal(size=(6, 4))
    out, cache = net.forward(x, training=True)
    grads, _ = net.backward(cache, np.ones_like(out))
    expected = cache.h2.T @ (cache.p * (1 - cache.p))
    assert np.allclose(grads["W3"], expected, rtol=0, atol=1e-14)


def test_finite_difference_on_linear_least_squares():
    rng = np.random.default_rng(6)
    X, y = rng.normal(size=(10, 3)), rng.normal(size=10)
    w = {"w": rng.normal(size=3)}
    analytic = {"w": 2 * X.T @ (X @ w["w"] - y)}
    numeric = finite_difference(lambda: float(np.sum((X @ w["w"] - y) ** 2)), w)
    assert max_relative_error(analytic, numeric) < 1e-9


def bce(y):
    return lambda out: classification_loss_and_grad(y, out)


def kink_free_cases(count, build, limit=200):
    cases = []
    for seed in range(limit):
        case = build(seed)
        net, x = case[0], case[1]
        _, cache = net.forward(x, rng=0, training=True, update_stats=False)
        if away_from_kinks(cache):
            cases.append(case)
        if len(cases) == count:
            return cases
    raise AssertionError(f"only {len(cases)} kink-free cases in {limit} seeds")


def _bce_case(seed):
    rng = np.random.default_rng(seed)
    return small_net(seed), rng.normal(size=(4, 4)), rng.integers(0, 2, 4)


def test_grad_check_cross_entropy_over_twenty_seeds():
    errors = [grad_check(net, bce(y), x) for net, x, y in kink_free_cases(20, _bce_case)]
    assert max(errors) < 1e-4


def _dropout_case(seed):
    rng = np.random.default_rng(100 + seed)
    return small_net(seed, out=3, dropout=0.25), rng.normal(size=(5, 4)), rng.random((5, 3))


def test_grad_check_with_dropout_and_multi_output():
    for net, x, target in kink_free_cases(5, _dropout_case):

        def loss(out):
            return float(np.sum((out - target) ** 2)), 2 * (out - target)

        assert grad_check(net, loss, x, dropout_seed=0) < 1e-4


def test_grad_check_inference_mode_batchnorm():
    rng = np.random.default_rng(7)
    net = small_net(3)
    net.running_mean = rng.normal(size=4)
    net.running_var = rng.random(4) + 0.5
    net.eval()
    x = rng.normal(size=(4, 4))
    y = np.array([0, 1, 1, 0])

    def run():
        out, cache = net.forward(x, training=False)
        return classification_loss_and_grad(y, out), cache

    (_, dout), cache = run()
    analytic, dx = net.backward(cache, dout)
    numeric = finite_difference(lambda: run()[0][0], net.params)
    assert max_relative_error(analytic, numeric) < 1e-4
    num_dx = finite_difference(lambda: run()[0][0], {"x": x})
    assert max_relative_error({"x": dx}, num_dx) < 1e-4


def test_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(8)
    net = small_net(4)
    x = rng.normal(size=(4, 4))
    y = np.array([1, 0, 1, 1])

    def run():
        out, cache = net.forward(x, training=True, update_stats=False)
        return classification_loss_and_grad(y, out), cache

    (_, dout), cache = run()
    _, dx = net.backward(cache, dout)
    assert max_relative_error({"x": dx}, finite_difference(lambda: run()[0][0], {"x": x})) < 1e-4


def test_adam_zero_gradient_no_decay_leaves_params():
    net = small_net()
    before = net.snapshot()
    Adam(net, 1e-2).step({k: np.zeros_like(v) for k, v in net.params.items()})
    assert all(np.array_equal(before[k], net.params[k]) for k in before)


def test_adam_first_step_moves_by_learning_rate():
    net = small_net()
    before = net.snapshot()
    grads = {k: np.full_like(v, 0.3) for k, v in net.params.items()}
    Adam(net, 1e-3).step(grads)
    for k in before:
        assert np.allclose(before[k] - net.params[k], 1e-3, rtol=1e-6)


def test_adam_weight_decay_shrinks_toward_zero():
    net = small_net()
    w = net.params["W1"].copy()
    Adam(net, 1e-3, weight_decay=5e-4).step({k: np.zeros_like(v) for k, v in net.params.items()})
    # g = 5e-4 * w, so the bias-corrected step is lr * sign(w) up to epsilon
    g = 5e-4 * w
    expected = w - 1e-3 * g / (np.abs(g) + 1e-8)
    assert np.allclose(net.params["W1"], expected, rtol=0, atol=1e-15)
    assert np.all(np.abs(net.params["W1"]) <= np.abs(w))


def test_adam_rejects_bad_gradients():
    net = small_net()
    opt = Adam(net)
    grads = {k: np.zeros_like(v) for k, v in net.params.items()}
    grads["W2"][0, 0] = np.inf
    with pytest.raises(NumericError):
        opt.step(grads)
    grads["W2"] = np.zeros((1, 1))
    with pytest.raises(ShapeError):
        opt.step(grads)
    with pytest.raises(ConfigError):
        Adam(net, lr=0)


def test_serialization_round_trip_is_bit_exact(tmp_path):
    net = small_net(9, dropout=0.1)
    net.forward(np.random.default_rng(0).normal(size=(8, 4)), rng=0, training=True)
    save_network(net, tmp_path / "net.npz", config_hash="abc123")
    loaded, h = load_network(tmp_path / "net.npz")
    assert h == "abc123"
    assert loaded.spec == net.spec
    for k in net.params:
        assert np.array_equal(loaded.params[k], net.params[k])
    assert np.array_equal(loaded.running_mean, net.running_mean)
    assert np.array_equal(loaded.running_var, net.running_var)
    x = np.random.default_rng(1).normal(size=(3, 4))
    assert np.array_equal(loaded(x), net(x))
    assert dumps_network(loaded, "abc123") == dumps_network(net, "abc123")
    again, _ = load_network(io.BytesIO(dumps_network(net)))
    assert np.array_equal(again(x), net(x))


@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(0, 2**31),
    n=st.integers(2, 12),
    d=st.integers(1, 6),
)
def test_outputs_in_open_unit_interval_property(seed, n, d):
    rng = np.random.default_rng(seed)
    net = Network(NetworkSpec(d, 5, 3, 2, 0.2), rng=seed)
    x = rng.normal(scale=10.0, size=(n, d))
    out, _ = net.forward(x, rng=seed, training=True)
    assert out.shape == (n, 2)
    assert np.all((out > 0) & (out < 1))
    assert np.all(net.running_var > 0)
