"""Generative adversarial imputation: generator, hint-fed discriminator, trainer."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import MaskedDataset
from .errors import ConfigError, DataError, NumericError, StateError
from .losses import (
    adversarial_loss_and_grad,
    discriminator_loss_and_grad,
    reconstruction_loss_and_grad,
)
from .nn import Adam, Network, NetworkSpec, as_rng
from .training import minibatches, rng_streams


@dataclass
class GainHyper:
    epochs: int = 50
    batch_size: int = 16
    lr_g: float = 1e-3
    lr_d: float = 1e-3
    weight_decay_g: float = 5e-4
    weight_decay_d: float = 5e-4
    p_hint: float = 0.9
    alpha: float = 5.0
    hidden1: int = 64
    hidden2: int = 32
    dropout: float = 0.1
    use_input_batchnorm: bool = True

    def validate(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if not 0.0 <= self.p_hint <= 1.0:
            raise ConfigError(f"p_hint must be in [0, 1], got {self.p_hint}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")

    def net_spec(self, input_dim: int, output_dim: int) -> NetworkSpec:
        return NetworkSpec(input_dim, self.hidden1, self.hidden2, output_dim, self.dropout, self.use_input_batchnorm)


@dataclass
class GainBatch:
    x_tilde: np.ndarray
    mask: np.ndarray
    z: np.ndarray
    b: np.ndarray
    h: np.ndarray


@dataclass
class ImputationResult:
    g: np.ndarray
    x_hat: np.ndarray


def sample_noise(shape, rng) -> np.ndarray:
    """Uniform noise on (0, 1]."""
    return 1.0 - as_rng(rng).random(shape)


def sample_hint_draw(shape, p_hint, rng) -> np.ndarray:
    return (as_rng(rng).random(shape) < p_hint).astype(np.float64)


def hint_vector(mask, b):
    return mask * b + 0.5 * (1.0 - b)


def sample_noise_and_hint(mask_batch, p_hint: float, seed):
    """Return ``(z, b, h)`` for one batch from a single seed."""
    if not 0.0 <= p_hint <= 1.0:
        raise ConfigError(f"p_hint must be in [0, 1], got {p_hint}")
    rng = as_rng(seed)
    mask_batch = np.asarray(mask_batch, dtype=np.float64)
    z = sample_noise(mask_batch.shape, rng)
    b = sample_hint_draw(mask_batch.shape, p_hint, rng)
    return z, b, hint_vector(mask_batch, b)


def mix(mask, x_tilde, fill):
    """Observed cells from ``x_tilde``, the rest from ``fill``."""
    return mask * x_tilde + (1.0 - mask) * fill


def generator_input(x_tilde, mask, z):
    return np.hstack([mix(mask, x_tilde, z), mask])


def impute_batch(G: Network, batch: GainBatch) -> ImputationResult:
    """Inference-mode imputation of one batch."""
    d = batch.mask.shape[1]
    if G.spec.input_dim != 2 * d or G.spec.output_dim != d:
        raise StateError(f"generator expects {G.spec.input_dim // 2} features, batch has {d}")
    g = G(generator_input(batch.x_tilde, batch.mask, batch.z))
    return ImputationResult(g, mix(batch.mask, batch.x_tilde, g))


def row_noise(n_rows: int, d: int, seed: int, draw: int, offset: int = 0) -> np.ndarray:
    """Noise whose row ``i`` depends only on ``(seed, draw, offset + i)``."""
    z = np.empty((n_rows, d))
    for i in range(n_rows):
        z[i] = sample_noise(d, np.random.default_rng([int(seed), int(draw), offset + i]))
    return z


def impute_full(G: Network, data: MaskedDataset, seed=0, n_draws: int = 1) -> np.ndarray:
    """Complete every row of ``data`` (already scaled) with the generator.

    With ``n_draws > 1`` the generator output is averaged over independent
    noise draws before mixing, which keeps observed cells exact.
    """
    if n_draws < 1:
        raise ConfigError("n_draws must be >= 1")
    d = data.n_features
    if G.spec.input_dim != 2 * d or G.spec.output_dim != d:
        raise StateError(f"generator expects {G.spec.input_dim // 2} features, data has {d}")
    g_sum = np.zeros_like(data.values)
    for k in range(n_draws):
        z = row_noise(data.n_samples, d, seed, k)
        g_sum += G(generator_input(data.values, data.mask, z))
    return mix(data.mask, data.values, g_sum / n_draws)


@dataclass
class GainModel:
    G: Network
    D: Network
    history: list[dict] = field(default_factory=list)


def _check_trainable(data: MaskedDataset):
    if data.n_samples < 2:
        raise DataError("training needs at least two rows")
    empty = (data.mask.sum(axis=0) == 0)
    if empty.any():
        raise DataError(f"features with no observed value: {[data.feature_names[j] for j in np.flatnonzero(empty)]}")


class GainTrainer:
    """Alternating generator/discriminator updates, one of each per minibatch.

    The discriminator step reuses the imputed batch from the preceding
    generator step (computed before the generator update) with a fresh hint.
    """

    def __init__(self, train: MaskedDataset, hyper: GainHyper, seed=0):
        hyper.validate()
        _check_trainable(train)
        self.data = train
        self.hyper = hyper
        d = train.n_features
        self.rng = rng_streams(seed)
        self.G = Network(hyper.net_spec(2 * d, d), rng=self.rng["init_g"])
        self.D = Network(hyper.net_spec(2 * d, d), rng=self.rng["init_d"])
        self.opt_g = Adam(self.G, hyper.lr_g, weight_decay=hyper.weight_decay_g)
        self.opt_d = Adam(self.D, hyper.lr_d, weight_decay=hyper.weight_decay_d)
        self.history: list[dict] = []
        self.steps = 0
        self._pending = None

    def generator_step(self, rows) -> dict:
        hp = self.hyper
        x, m = self.data.values[rows], self.data.mask[rows]
        b = sample_hint_draw(m.shape, hp.p_hint, self.rng["hint"])
        h = hint_vector(m, b)
        z = sample_noise(m.shape, self.rng["noise"])
        g, g_cache = self.G.forward(generator_input(x, m, z), rng=self.rng["drop_g"], training=True)
        x_hat = mix(m, x, g)
        m_hat, d_cache = self.D.forward(np.hstack([x_hat, h]), rng=self.rng["drop_d"], training=True, update_stats=False)
        loss_g, dm_hat = adversarial_loss_and_grad(m, m_hat)
        loss_r, dg_rec = reconstruction_loss_and_grad(x, g, m, self.data.feature_kinds)
        _, d_in = self.D.backward(d_cache, dm_hat)
        d = m.shape[1]
        dg = (1.0 - m) * d_in[:, :d] + hp.alpha * dg_rec
        grads_g, _ = self.G.backward(g_cache, dg)
        self.opt_g.step(grads_g)
        self._pending = (rows, x_hat)
        return {"loss_g_adv": loss_g, "loss_r": loss_r}

    def discriminator_step(self) -> float:
        if self._pending is None:
            raise StateError("discriminator step needs a preceding generator step")
        rows, x_hat = self._pending
        m = self.data.mask[rows]
        b = sample_hint_draw(m.shape, self.hyper.p_hint, self.rng["hint"])
        h = hint_vector(m, b)
        m_hat, cache = self.D.forward(np.hstack([x_hat, h]), rng=self.rng["drop_d"], training=True)
        loss_d, dm_hat = discriminator_loss_and_grad(m, m_hat)
        grads, _ = self.D.backward(cache, dm_hat)
        self.opt_d.step(grads)
        return loss_d

    def iteration(self, rows) -> dict:
        losses = self.generator_step(rows)
        losses["loss_d"] = self.discriminator_step()
        self.steps += 1
        return losses

    def run_epoch(self):
        epoch = len(self.history)
        records = []
        for b, rows in enumerate(minibatches(self.data.n_samples, self.hyper.batch_size, self.rng["shuffle"])):
            try:
                losses = self.iteration(rows)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {b}: {exc}") from exc
            if not all(np.isfinite(v) for v in losses.values()):
                raise NumericError(f"epoch {epoch}, batch {b}: non-finite loss {losses}")
            records.append(losses)
        row = {"epoch": epoch}
        for key in ("loss_g_adv", "loss_r", "loss_d"):
            row[key] = float(np.mean([r[key] for r in records])) if records else float("nan")
        self.history.append(row)
        return row

    def fit(self) -> GainModel:
        for _ in range(self.hyper.epochs):
            self.run_epoch()
        self.G.eval()
        self.D.eval()
        return GainModel(self.G, self.D, self.history)


def train_gain(train: MaskedDataset, hyper: GainHyper, seed=0) -> GainModel:
    return GainTrainer(train, hyper, seed).fit()


GAIN_HISTORY_COLUMNS = ("epoch", "loss_g_adv", "loss_r", "loss_d")


def write_history(history: list[dict], path, columns=GAIN_HISTORY_COLUMNS):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in history:
            w.writerow([row[c] if c == "epoch" else repr(float(row[c])) for c in columns])
