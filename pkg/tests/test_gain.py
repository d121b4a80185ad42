import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import cgain.gain as gain_mod
from cgain.baselines import simple_impute
from cgain.data import BINARY, NUMERIC, MaskedDataset, apply_mcar, fit_scaler, scale, unscale_values
from cgain.errors import ConfigError, DataError, NumericError, StateError
from cgain.gain import (
    GAIN_HISTORY_COLUMNS,
    GainBatch,
    GainHyper,
    GainTrainer,
    hint_vector,
    impute_batch,
    impute_full,
    mix,
    row_noise,
    sample_noise_and_hint,
    train_gain,
    write_history,
)
from cgain.losses import gain_loss_d, gain_loss_g, gain_loss_r
from cgain.metrics import imputation_rmse
from cgain.nn import Network
from cgain.training import rng_streams

TINY = GainHyper(epochs=2, batch_size=8, hidden1=6, hidden2=4)


def toy(n=40, d=3, seed=0, rate=0.3):
    rng = np.random.default_rng(seed)
    full = MaskedDataset(rng.random((n, d)), np.ones((n, d)), rng.integers(0, 2, n))
    return apply_mcar(full, rate, seed=seed)


def linear_tie(seed, n=600):
    rng = np.random.default_rng(seed)
    x1 = rng.normal(size=n)
    full = MaskedDataset(np.column_stack([x1, 2 * x1]), np.ones((n, 2)), None)
    return full, apply_mcar(full, 0.3, seed=seed)


# -- noise and hints ------------------------------------------------------------


def test_hint_extremes():
    m = (np.random.default_rng(0).random((6, 4)) < 0.5).astype(float)
    assert np.array_equal(hint_vector(m, np.ones_like(m)), m)
    assert np.all(hint_vector(m, np.zeros_like(m)) == 0.5)


def test_hint_fraction_concentration():
    m = (np.random.default_rng(1).random((1000, 100)) < 0.7).astype(float)
    _, _, h = sample_noise_and_hint(m, 0.9, seed=3)
    assert abs(np.mean(h == 0.5) - 0.10) < 0.01


def test_noise_range_and_determinism():
    m = np.ones((50, 20))
    z, b, h = sample_noise_and_hint(m, 0.5, seed=7)
    assert np.all((z > 0) & (z <= 1))
    assert set(np.unique(b)) <= {0.0, 1.0}
    z2, b2, h2 = sample_noise_and_hint(m, 0.5, seed=7)
    assert np.array_equal(z, z2) and np.array_equal(b, b2) and np.array_equal(h, h2)
    with pytest.raises(ConfigError):
        sample_noise_and_hint(m, 1.5, seed=0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), p=st.floats(0, 1), n=st.integers(1, 20), d=st.integers(1, 8))
def test_hint_soundness_property(seed, p, n, d):
    m = (np.random.default_rng(seed).random((n, d)) < 0.6).astype(float)
    _, b, h = sample_noise_and_hint(m, p, seed)
    assert set(np.unique(h)) <= {0.0, 0.5, 1.0}
    revealed = h != 0.5
    assert np.array_equal(h[revealed], m[revealed])
    assert np.array_equal(h, m * b + 0.5 * (1 - b))


# -- imputation -----------------------------------------------------------------


def generator(d, seed=0, hyper=TINY):
    return Network(hyper.net_spec(2 * d, d), rng=seed).eval()


def batch_for(x, m, seed=0):
    z, b, h = sample_noise_and_hint(m, 0.9, seed)
    return GainBatch(x, m, z, b, h)


def test_impute_batch_mask_extremes():
    G = generator(3)
    x = np.random.default_rng(0).random((5, 3))
    res = impute_batch(G, batch_for(x, np.ones((5, 3))))
    assert np.array_equal(res.x_hat, x)
    res = impute_batch(G, batch_for(x, np.zeros((5, 3))))
    assert np.array_equal(res.x_hat, res.g)
    assert np.all((res.g > 0) & (res.g < 1))


def test_impute_batch_hand_mixing():
    G = generator(2)
    G.zero_()  # every output is sigmoid(0) = 0.5
    G.params["bn_gamma"][:] = 1.0
    x = np.array([[0.2, 0.9], [0.4, 0.1]])
    m = np.array([[1.0, 0.0], [0.0, 1.0]])
    res = impute_batch(G, batch_for(x, m))
    assert np.array_equal(res.x_hat, np.array([[0.2, 0.5], [0.5, 0.1]]))


def test_impute_batch_width_mismatch():
    with pytest.raises(StateError):
        impute_batch(generator(3), batch_for(np.zeros((2, 4)), np.ones((2, 4))))


def test_generator_has_no_hidden_column_dependence():
    d, perm = 3, np.array([2, 0, 1])
    G = generator(d, seed=4)
    Gp = G.copy()
    both = np.concatenate([perm, perm + d])
    Gp.params["bn_gamma"] = G.params["bn_gamma"][both]
    Gp.params["bn_beta"] = G.params["bn_beta"][both]
    Gp.params["W1"] = G.params["W1"][both]
    Gp.params["W3"] = G.params["W3"][:, perm]
    Gp.params["b3"] = G.params["b3"][perm]
    Gp.running_mean = G.running_mean[both]
    Gp.running_var = G.running_var[both]
    x = np.random.default_rng(1).random((6, d))
    m = (np.random.default_rng(2).random((6, d)) < 0.6).astype(float)
    b = batch_for(x, m)
    pb = GainBatch(x[:, perm], m[:, perm], b.z[:, perm], b.b[:, perm], b.h[:, perm])
    assert np.allclose(impute_batch(Gp, pb).g, impute_batch(G, b).g[:, perm], rtol=0, atol=1e-15)


def test_impute_full_complete_data_unchanged():
    data = MaskedDataset(np.random.default_rng(0).random((10, 3)), np.ones((10, 3)), None)
    assert np.array_equal(impute_full(generator(3), data, seed=1), data.values)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), draws=st.integers(1, 3))
def test_impute_full_preserves_observed_cells(seed, draws):
    data = toy(seed=seed % 100)
    out = impute_full(generator(3, seed), data, seed=seed, n_draws=draws)
    obs = data.mask == 1
    assert np.array_equal(out[obs], data.values[obs])


def test_impute_full_draws_share_first_draw_noise():
    data = toy()
    G = generator(3, 2)
    one = impute_full(G, data, seed=5, n_draws=1)
    z0 = row_noise(data.n_samples, 3, 5, 0)
    z1 = row_noise(data.n_samples, 3, 5, 1)
    g0 = G(np.hstack([mix(data.mask, data.values, z0), data.mask]))
    g1 = G(np.hstack([mix(data.mask, data.values, z1), data.mask]))
    assert np.array_equal(one, mix(data.mask, data.values, g0))
    assert np.array_equal(impute_full(G, data, seed=5, n_draws=2), mix(data.mask, data.values, (g0 + g1) / 2))


def test_row_noise_depends_only_on_row_position():
    full = row_noise(10, 4, seed=3, draw=0)
    assert np.array_equal(row_noise(4, 4, seed=3, draw=0, offset=6), full[6:])


def test_averaging_draws_shrinks_variance():
    G = generator(3, 9)
    row = MaskedDataset(np.array([[0.3, 0.0, 0.0]]), np.array([[1.0, 0.0, 0.0]]), None)
    single = np.array([impute_full(G, row, seed=s)[0, 1] for s in range(400)])
    averaged = np.array([impute_full(G, row, seed=s, n_draws=64)[0, 1] for s in range(400)])
    ratio = averaged.var() / single.var()
    assert 0.6 / 64 < ratio < 1.6 / 64


def test_impute_full_width_and_draw_errors():
    with pytest.raises(StateError):
        impute_full(generator(2), toy(d=3))
    with pytest.raises(ConfigError):
        impute_full(generator(3), toy(d=3), n_draws=0)


# -- losses ---------------------------------------------------------------------


def test_loss_examples():
    assert gain_loss_g(np.ones((2, 3)), np.full((2, 3), 0.3)) == 0.0
    x = np.array([[0.2, 1.0]])
    m = np.array([[1.0, 1.0]])
    assert gain_loss_r(x, x, m, (NUMERIC, NUMERIC)) == 0.0
    assert gain_loss_d(np.array([[1.0, 0.0]]), np.array([[0.5, 0.5]])) == pytest.approx(1.3863, abs=1e-4)


def test_reconstruction_numeric_and_binary_terms():
    x = np.array([[0.5, 1.0, 0.0]])
    r = np.array([[0.25, 0.8, 0.3]])
    m = np.array([[1.0, 1.0, 1.0]])
    expected = 0.25**2 - math.log(0.8) - 0.0
    assert gain_loss_r(x, r, m, (NUMERIC, BINARY, BINARY)) == pytest.approx(expected, abs=1e-15)
    m[0, 0] = 0.0
    assert gain_loss_r(x, r, m, (NUMERIC, BINARY, BINARY)) == pytest.approx(-math.log(0.8), abs=1e-15)


def test_losses_average_per_sample_sums():
    m = np.array([[0.0, 0.0], [1.0, 0.0]])
    m_hat = np.array([[0.5, 0.25], [0.9, 0.5]])
    expected = -(math.log(0.5) + math.log(0.25) + math.log(0.5)) / 2
    assert gain_loss_g(m, m_hat) == pytest.approx(expected, abs=1e-15)


def test_losses_finite_at_extremes():
    m = np.array([[1.0, 0.0]])
    for m_hat in (np.zeros((1, 2)), np.ones((1, 2))):
        assert math.isfinite(gain_loss_g(m, m_hat)) and math.isfinite(gain_loss_d(m, m_hat))
    assert math.isfinite(gain_loss_r(np.ones((1, 2)), np.zeros((1, 2)), np.ones((1, 2)), (BINARY, BINARY)))


# -- training -------------------------------------------------------------------


def test_zero_epochs_returns_initial_networks():
    data = toy()
    model = train_gain(data, GainHyper(epochs=0, hidden1=6, hidden2=4), seed=11)
    assert model.history == []
    streams = rng_streams(11)
    G0 = Network(GainHyper(hidden1=6, hidden2=4).net_spec(6, 3), rng=streams["init_g"])
    assert all(np.array_equal(G0.params[k], model.G.params[k]) for k in G0.params)


def test_training_is_deterministic():
    a = train_gain(toy(), TINY, seed=3)
    b = train_gain(toy(), TINY, seed=3)
    assert a.history == b.history
    assert all(np.array_equal(a.G.params[k], b.G.params[k]) for k in a.G.params)
    c = train_gain(toy(), TINY, seed=4)
    assert not np.array_equal(a.G.params["W1"], c.G.params["W1"])


def test_history_records_three_curves(tmp_path):
    model = train_gain(toy(), TINY, seed=0)
    assert [r["epoch"] for r in model.history] == [0, 1]
    write_history(model.history, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == ",".join(GAIN_HISTORY_COLUMNS) and len(lines) == 3


def test_non_finite_loss_reports_epoch_and_batch(monkeypatch):
    def broken(x, r, m, kinds):
        return float("nan"), np.zeros_like(r)

    monkeypatch.setattr(gain_mod, "reconstruction_loss_and_grad", broken)
    with pytest.raises(NumericError, match="epoch 0, batch 0"):
        train_gain(toy(), TINY, seed=0)


def test_training_rejects_unobserved_feature():
    data = toy()
    mask = data.mask.copy()
    mask[:, 0] = 0
    mask[:, 1] = 1
    with pytest.raises(DataError):
        train_gain(MaskedDataset(data.values, mask, None), TINY)


def test_freeze_contract_per_step():
    trainer = GainTrainer(toy(), TINY, seed=0)
    rows = np.arange(8)
    d_before = trainer.D.snapshot()
    trainer.generator_step(rows)
    assert all(np.array_equal(d_before[k], trainer.D.params[k]) for k in d_before)
    g_before = trainer.G.snapshot()
    trainer.discriminator_step()
    assert all(np.array_equal(g_before[k], trainer.G.params[k]) for k in g_before)
    assert not all(np.array_equal(d_before[k], trainer.D.params[k]) for k in d_before)


def test_discriminator_step_needs_generator_step():
    with pytest.raises(StateError):
        GainTrainer(toy(), TINY).discriminator_step()


def gain_rmse(seed, hyper=None):
    full, masked = linear_tie(seed)
    state = fit_scaler(masked)
    model = train_gain(scale(masked, state), hyper or GainHyper(), seed)
    imputed = unscale_values(impute_full(model.G, scale(masked, state), seed), state)
    return (imputation_rmse(full.values, imputed, masked.mask, full.mask)[0],
            imputation_rmse(full.values, simple_impute(masked), masked.mask, full.mask)[0])


def test_linear_tie_beats_simple_imputation():
    results = np.array([gain_rmse(seed) for seed in range(5)])
    assert results[:, 0].mean() < results[:, 1].mean()


def _smoothed_total_endpoints(history, alpha):
    total = [r["loss_g_adv"] + alpha * r["loss_r"] for r in history[:20]]
    return np.mean(total[:5]), np.mean(total[15:20])


@pytest.mark.xfail(
    strict=True,
    reason="with p_hint 0.9 the discriminator learns to read the revealed mask, so the adversarial "
    "term rises while the discriminator loss falls; see test_generator_total_loss_falls_without_hints",
)
def test_generator_total_loss_smoothed_non_increasing_with_defaults():
    _, masked = linear_tie(0)
    hyper = GainHyper(epochs=20)
    model = train_gain(scale(masked, fit_scaler(masked)), hyper, 0)
    start, end = _smoothed_total_endpoints(model.history, hyper.alpha)
    assert end <= start


def test_generator_total_loss_falls_without_hints():
    _, masked = linear_tie(0)
    hyper = GainHyper(epochs=20, p_hint=0.0)
    model = train_gain(scale(masked, fit_scaler(masked)), hyper, 0)
    start, end = _smoothed_total_endpoints(model.history, hyper.alpha)
    assert end <= start
    assert model.history[-1]["loss_r"] < model.history[0]["loss_r"]
