"""Random streams, minibatching and the plain downstream classifier."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .losses import classification_loss_and_grad
from .metrics import macro_f1
from .nn import Adam, Network, NetworkSpec

# One independent generator per consumer, so that turning a component on or
# off never shifts the random draws seen by the others.
STREAMS = (
    "init_g",
    "init_d",
    "init_c",
    "shuffle",
    "noise",
    "hint",
    "drop_g",
    "drop_d",
    "drop_c",
)


def rng_streams(seed) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(child) for name, child in zip(STREAMS, children)}


def minibatches(n: int, batch_size: int, rng: np.random.Generator):
    """Shuffled index batches for one epoch; a trailing batch of one row is dropped."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        rows = order[start : start + batch_size]
        if rows.size < 2 and n >= 2:
            break
        yield rows


@dataclass
class ClassifierHyper:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 5e-4
    hidden1: int = 32
    hidden2: int = 16
    dropout: float = 0.1
    use_input_batchnorm: bool = True

    def validate(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("classifier epochs must be >= 0 and batch_size >= 1")

    def spec(self, input_dim: int) -> NetworkSpec:
        return NetworkSpec(input_dim, self.hidden1, self.hidden2, 1, self.dropout, self.use_input_batchnorm)


@dataclass
class ClassifierModel:
    net: Network
    history: list[dict] = field(default_factory=list)

    def predict_proba(self, x) -> np.ndarray:
        return self.net(x)[:, 0]


def train_classifier(x, y, hyper: ClassifierHyper, seed=0) -> ClassifierModel:
    """Fit a sigmoid-output network with cross entropy on completed data."""
    hyper.validate()
    x = np.asarray(x, dtype=np.float64)
    if y is None:
        raise DataError("classifier training needs labels")
    y = np.asarray(y, dtype=np.float64)
    streams = rng_streams(seed)
    net = Network(hyper.spec(x.shape[1]), rng=streams["init_c"])
    opt = Adam(net, hyper.lr, weight_decay=hyper.weight_decay)
    history = []
    for epoch in range(hyper.epochs):
        losses, preds, seen = [], [], []
        for b, rows in enumerate(minibatches(len(x), hyper.batch_size, streams["shuffle"])):
            out, cache = net.forward(x[rows], rng=streams["drop_c"], training=True)
            loss, grad = classification_loss_and_grad(y[rows], out)
            if not np.isfinite(loss):
                raise NumericError(f"classifier epoch {epoch}, batch {b}: non-finite loss")
            grads, _ = net.backward(cache, grad)
            opt.step(grads)
            losses.append(loss)
            preds.append(out[:, 0])
            seen.append(y[rows])
        if losses:
            history.append(
                {
                    "epoch": epoch,
                    "loss_c": float(np.mean(losses)),
                    "train_macro_f1": macro_f1(np.concatenate(seen), np.concatenate(preds)),
                }
            )
    net.eval()
    return ClassifierModel(net, history)
