"""Classifier-guided adversarial imputation.

A generator fills missing cells, a classifier predicts the label from the
imputed rows, and a discriminator sees the imputed rows, the predicted label
and a hint and guesses which cells were observed.  Generator and classifier
are updated together on

    adversarial + alpha * reconstruction + beta * cross-entropy

with the adversarial gradient flowing back through the frozen discriminator
into both of them; the discriminator is then updated with both frozen.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import MaskedDataset, ScalerState
from .errors import ConfigError, DataError, NumericError, ShapeError, StateError
from .gain import (
    GainHyper,
    _check_trainable,
    generator_input,
    hint_vector,
    mix,
    row_noise,
    sample_hint_draw,
    sample_noise,
)
from .losses import (
    adversarial_loss_and_grad,
    classification_loss_and_grad,
    discriminator_loss_and_grad,
    reconstruction_loss_and_grad,
)
from .metrics import macro_f1
from .nn import Adam, Network, NetworkSpec, finite_difference, max_relative_error, network_arrays, network_from_arrays
from .training import minibatches, rng_streams


@dataclass
class CgHyper(GainHyper):
    epochs: int = 50
    batch_size: int = 128
    lr_c: float = 1e-3
    weight_decay_c: float = 5e-4
    beta: float = 1.0
    k_steps: int = 1
    c_hidden1: int = 32
    c_hidden2: int = 16
    c_dropout: float = 0.1
    # False feeds the discriminator (x_hat, h) only, i.e. a label input that
    # carries no information; used to check the reduction to plain GAIN.
    label_to_discriminator: bool = True

    def validate(self):
        super().validate()
        if self.k_steps < 1:
            raise ConfigError(f"k_steps must be >= 1, got {self.k_steps}")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")

    def classifier_spec(self, d: int) -> NetworkSpec:
        return NetworkSpec(d, self.c_hidden1, self.c_hidden2, 1, self.c_dropout, self.use_input_batchnorm)


@dataclass
class TrainedTriple:
    G: Network
    C: Network
    D: Network
    scaler: ScalerState | None = None
    history: list[dict] = field(default_factory=list)
    config_hash: str = ""

    @property
    def n_features(self) -> int:
        return self.C.spec.input_dim


# -- the three players -----------------------------------------------------------


def classify(C: Network, x_hat) -> np.ndarray:
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x_hat.ndim != 2 or x_hat.shape[1] != C.spec.input_dim:
        raise ShapeError(f"classifier expects width {C.spec.input_dim}, got {x_hat.shape}")
    return C(x_hat)[:, 0]


def discriminator_input(x_hat, y_hat, h) -> np.ndarray:
    """Column layout ``[x_hat (d) | y_hat (1) | h (d)]``; ``y_hat=None`` drops the middle column."""
    x_hat = np.asarray(x_hat, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if x_hat.shape != h.shape:
        raise ShapeError(f"x_hat {x_hat.shape} and h {h.shape} differ")
    if y_hat is None:
        return np.hstack([x_hat, h])
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1, 1)
    if y_hat.shape[0] != x_hat.shape[0]:
        raise ShapeError(f"y_hat has {y_hat.shape[0]} rows, x_hat {x_hat.shape[0]}")
    return np.hstack([x_hat, y_hat, h])


def discriminate(D: Network, x_hat, y_hat, h) -> np.ndarray:
    return D(discriminator_input(x_hat, y_hat, h))


def combined_cg_loss(mask, m_hat, x_obs, reconstruction, kinds, y, y_hat, alpha, beta):
    """Return ``(total, adversarial, reconstruction, classification)``.

    ``reconstruction`` is the generator output; its error is counted on
    observed cells only.
    """
    l_g = adversarial_loss_and_grad(mask, m_hat)[0]
    l_r = reconstruction_loss_and_grad(x_obs, reconstruction, mask, kinds)[0]
    l_c = classification_loss_and_grad(y, np.asarray(y_hat, dtype=np.float64).reshape(-1, 1))[0]
    return l_g + alpha * l_r + beta * l_c, l_g, l_r, l_c


@dataclass
class JointPass:
    losses: dict
    grads_g: dict
    grads_c: dict
    x_hat: np.ndarray
    y_hat: np.ndarray


def joint_objective(G, C, D, x, m, y, z, h, kinds, alpha, beta, label_to_discriminator=True,
                    rng_g=None, rng_c=None, rng_d=None, update_stats=True) -> JointPass:
    """Forward the generator/classifier objective and backpropagate it.

    D runs in training mode without touching its running statistics and its
    parameter gradients are discarded.
    """
    d = m.shape[1]
    g, g_cache = G.forward(generator_input(x, m, z), rng=rng_g, training=True, update_stats=update_stats)
    x_hat = mix(m, x, g)
    y_hat, c_cache = C.forward(x_hat, rng=rng_c, training=True, update_stats=update_stats)
    d_in = discriminator_input(x_hat, y_hat if label_to_discriminator else None, h)
    m_hat, d_cache = D.forward(d_in, rng=rng_d, training=True, update_stats=False)

    l_g, dm_hat = adversarial_loss_and_grad(m, m_hat)
    l_r, dg_rec = reconstruction_loss_and_grad(x, g, m, kinds)
    l_c, dy_bce = classification_loss_and_grad(y, y_hat)

    _, dd_in = D.backward(d_cache, dm_hat)
    dy_hat = beta * dy_bce
    if label_to_discriminator:
        dy_hat = dy_hat + dd_in[:, d : d + 1]
    grads_c, dc_in = C.backward(c_cache, dy_hat)
    dx_hat = dd_in[:, :d] + dc_in
    dg = (1.0 - m) * dx_hat + alpha * dg_rec
    grads_g, _ = G.backward(g_cache, dg)
    losses = {
        "total": l_g + alpha * l_r + beta * l_c,
        "loss_g_adv": l_g,
        "loss_r": l_r,
        "loss_c": l_c,
    }
    return JointPass(losses, grads_g, grads_c, x_hat, y_hat)


def joint_gradient_check(G, C, D, x, m, y, z, h, kinds, alpha, beta, eps=1e-5,
                         label_to_discriminator=True, dropout_seed=0) -> float:
    """Max relative error of the joint G/C gradients against central differences."""
    seeds = dict(rng_g=dropout_seed, rng_c=dropout_seed + 1, rng_d=dropout_seed + 2)

    def run():
        return joint_objective(G, C, D, x, m, y, z, h, kinds, alpha, beta,
                               label_to_discriminator, update_stats=False, **seeds)

    analytic = run()
    arrays = {f"G.{k}": v for k, v in G.params.items()}
    arrays.update({f"C.{k}": v for k, v in C.params.items()})
    numeric = finite_difference(lambda: run().losses["total"], arrays, eps)
    combined = {f"G.{k}": v for k, v in analytic.grads_g.items()}
    combined.update({f"C.{k}": v for k, v in analytic.grads_c.items()})
    return max_relative_error(combined, numeric)


def discriminator_objective(D, x_hat, y_hat, h, m, rng_d=None, update_stats=True):
    m_hat, cache = D.forward(discriminator_input(x_hat, y_hat, h), rng=rng_d, training=True, update_stats=update_stats)
    loss, dm_hat = discriminator_loss_and_grad(m, m_hat)
    grads, _ = D.backward(cache, dm_hat)
    return loss, grads


# -- training ------------------------------------------------------------------------


class ClassifierGainTrainer:
    """Minibatch three-player training.

    Per iteration: one hint draw, then ``k_steps`` joint generator/classifier
    updates (fresh noise each), then one discriminator update on the last
    imputed batch and predicted labels with a fresh hint draw.
    """

    def __init__(self, train: MaskedDataset, hyper: CgHyper, seed=0):
        hyper.validate()
        _check_trainable(train)
        if train.labels is None:
            raise DataError("Classifier-GAIN training needs labels for every row")
        self.data = train
        self.hyper = hyper
        d = train.n_features
        self.rng = rng_streams(seed)
        d_width = 2 * d + 1 if hyper.label_to_discriminator else 2 * d
        self.G = Network(hyper.net_spec(2 * d, d), rng=self.rng["init_g"])
        self.D = Network(hyper.net_spec(d_width, d), rng=self.rng["init_d"])
        self.C = Network(hyper.classifier_spec(d), rng=self.rng["init_c"])
        self.opt_g = Adam(self.G, hyper.lr_g, weight_decay=hyper.weight_decay_g)
        self.opt_c = Adam(self.C, hyper.lr_c, weight_decay=hyper.weight_decay_c)
        self.opt_d = Adam(self.D, hyper.lr_d, weight_decay=hyper.weight_decay_d)
        self.labels = train.labels.astype(np.float64).reshape(-1, 1)
        self.history: list[dict] = []
        self.steps = 0
        self._pending = None

    def generator_classifier_step(self, rows) -> dict:
        hp = self.hyper
        x, m, y = self.data.values[rows], self.data.mask[rows], self.labels[rows]
        h = hint_vector(m, sample_hint_draw(m.shape, hp.p_hint, self.rng["hint"]))
        for _ in range(hp.k_steps):
            z = sample_noise(m.shape, self.rng["noise"])
            jp = joint_objective(
                self.G, self.C, self.D, x, m, y, z, h, self.data.feature_kinds, hp.alpha, hp.beta,
                hp.label_to_discriminator, self.rng["drop_g"], self.rng["drop_c"], self.rng["drop_d"],
            )
            self.opt_g.step(jp.grads_g)
            self.opt_c.step(jp.grads_c)
        self._pending = (rows, jp.x_hat, jp.y_hat)
        return dict(jp.losses, y_hat=jp.y_hat[:, 0])

    def discriminator_step(self) -> float:
        if self._pending is None:
            raise StateError("discriminator step needs a preceding generator/classifier step")
        rows, x_hat, y_hat = self._pending
        m = self.data.mask[rows]
        h = hint_vector(m, sample_hint_draw(m.shape, self.hyper.p_hint, self.rng["hint"]))
        loss, grads = discriminator_objective(
            self.D, x_hat, y_hat if self.hyper.label_to_discriminator else None, h, m, self.rng["drop_d"]
        )
        self.opt_d.step(grads)
        return loss

    def iteration(self, rows) -> dict:
        out = self.generator_classifier_step(rows)
        out["loss_d"] = self.discriminator_step()
        self.steps += 1
        return out

    def run_epoch(self) -> dict:
        epoch = len(self.history)
        records, preds, seen = [], [], []
        for b, rows in enumerate(minibatches(self.data.n_samples, self.hyper.batch_size, self.rng["shuffle"])):
            try:
                out = self.iteration(rows)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {b}: {exc}") from exc
            preds.append(out.pop("y_hat"))
            seen.append(self.data.labels[rows])
            if not all(np.isfinite(v) for v in out.values()):
                raise NumericError(f"epoch {epoch}, batch {b}: non-finite loss {out}")
            records.append(out)
        row = {"epoch": epoch}
        for key in ("loss_g_adv", "loss_r", "loss_c", "loss_d"):
            row[key] = float(np.mean([r[key] for r in records])) if records else float("nan")
        row["train_macro_f1"] = macro_f1(np.concatenate(seen), np.concatenate(preds)) if records else float("nan")
        self.history.append(row)
        return row

    def fit(self, scaler: ScalerState | None = None) -> TrainedTriple:
        for _ in range(self.hyper.epochs):
            self.run_epoch()
        for net in (self.G, self.C, self.D):
            net.eval()
        return TrainedTriple(self.G, self.C, self.D, scaler, self.history)


def train_classifier_gain(train: MaskedDataset, hyper: CgHyper, seed=0, scaler: ScalerState | None = None) -> TrainedTriple:
    return ClassifierGainTrainer(train, hyper, seed).fit(scaler)


# -- inference ------------------------------------------------------------------------


def predict(triple: TrainedTriple, data: MaskedDataset, seed=0, n_draws: int = 1):
    """Impute with the generator, then classify; labels in ``data`` are ignored.

    Returns ``(x_hat, y_hat)``.  ``data`` must already be scaled with
    ``triple.scaler``.
    """
    if n_draws < 1:
        raise ConfigError("n_draws must be >= 1")
    d = data.n_features
    if d != triple.n_features:
        raise ShapeError(f"model expects {triple.n_features} features, data has {d}")
    if triple.scaler is not None and not triple.scaler.matches(data):
        raise StateError("data does not match the model's scaler")
    g_sum = np.zeros_like(data.values)
    y_sum = np.zeros(data.n_samples)
    for k in range(n_draws):
        z = row_noise(data.n_samples, d, seed, k)
        g = triple.G(generator_input(data.values, data.mask, z))
        g_sum += g
        y_sum += classify(triple.C, mix(data.mask, data.values, g))
    return mix(data.mask, data.values, g_sum / n_draws), y_sum / n_draws


# -- serialization ---------------------------------------------------------------------

TRIPLE_FORMAT = "cgain-triple-1"
CG_HISTORY_COLUMNS = ("epoch", "loss_g_adv", "loss_r", "loss_c", "loss_d", "train_macro_f1")


def triple_arrays(triple: TrainedTriple) -> dict[str, np.ndarray]:
    arrays = {"format": np.array(TRIPLE_FORMAT), "config_hash": np.array(triple.config_hash)}
    for name in ("G", "C", "D"):
        arrays.update(network_arrays(getattr(triple, name), prefix=f"{name}/"))
    if triple.scaler is not None:
        arrays["scaler/mins"] = triple.scaler.mins
        arrays["scaler/maxs"] = triple.scaler.maxs
        arrays["scaler/kinds"] = np.array(json.dumps(list(triple.scaler.kinds)))
    arrays["history"] = np.array(json.dumps(triple.history))
    return arrays


def save_triple(triple: TrainedTriple, path):
    np.savez(path, **triple_arrays(triple))


def load_triple(path) -> TrainedTriple:
    with np.load(path, allow_pickle=False) as f:
        arrays = {k: f[k] for k in f.files}
    if str(arrays.get("format")) != TRIPLE_FORMAT:
        raise StateError(f"{path}: not a Classifier-GAIN model file")
    nets = {name: network_from_arrays(arrays, prefix=f"{name}/") for name in ("G", "C", "D")}
    scaler = None
    if "scaler/mins" in arrays:
        scaler = ScalerState(
            arrays["scaler/mins"].copy(),
            arrays["scaler/maxs"].copy(),
            tuple(json.loads(str(arrays["scaler/kinds"]))),
        )
    return TrainedTriple(
        nets["G"], nets["C"], nets["D"], scaler, json.loads(str(arrays["history"])), str(arrays["config_hash"])
    )


def hyper_to_dict(hyper) -> dict:
    return asdict(hyper)
