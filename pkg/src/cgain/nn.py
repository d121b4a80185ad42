"""Small feed-forward network engine in double precision.

Every network here has the same topology::

    input -> [batchnorm] -> dense -> relu -> dropout
          -> dense -> relu -> dropout -> dense -> sigmoid (clamped)

which is what the generator, classifier and discriminator all use.  Gradients
are computed by hand (reverse mode) and ``backward`` also returns the gradient
with respect to the network input, so losses can be pushed through a frozen
network into whatever produced its input.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, NumericError, ShapeError, StateError

PROB_FLOOR = 1e-7
BN_MOMENTUM = 0.9
BN_EPS = 1e-8

DTYPE = np.float64


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden1: int
    hidden2: int
    output_dim: int
    dropout_rate: float = 0.0
    use_input_batchnorm: bool = True

    def __post_init__(self):
        for name in ("input_dim", "hidden1", "hidden2", "output_dim"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")


def as_rng(rng) -> np.random.Generator | None:
    if rng is None or isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def sigmoid(z):
    # tanh form is stable for large |z| and accurate to a few ulp
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class _Cache:
    owner: int
    version: int
    training: bool
    x: np.ndarray
    xhat: np.ndarray | None
    inv_std: np.ndarray | None
    a0: np.ndarray
    z1: np.ndarray
    d1: np.ndarray | None
    h1: np.ndarray
    z2: np.ndarray
    d2: np.ndarray | None
    h2: np.ndarray
    p: np.ndarray


class Network:
    """Two-hidden-layer perceptron with sigmoid outputs.

    ``params`` is an ordered dict of named arrays (``bn_gamma``, ``bn_beta``,
    ``W1`` ... ``b3``).  Batchnorm running statistics live outside ``params``
    because they are not trained by gradient descent.
    """

    def __init__(self, spec: NetworkSpec, rng=None):
        self.spec = spec
        rng = as_rng(rng) or np.random.default_rng()
        dims = [spec.input_dim, spec.hidden1, spec.hidden2, spec.output_dim]
        self.params: dict[str, np.ndarray] = {}
        if spec.use_input_batchnorm:
            self.params["bn_gamma"] = np.ones(spec.input_dim, dtype=DTYPE)
            self.params["bn_beta"] = np.zeros(spec.input_dim, dtype=DTYPE)
        for i in range(3):
            fan_in, fan_out = dims[i], dims[i + 1]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.params[f"W{i + 1}"] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            self.params[f"b{i + 1}"] = np.zeros(fan_out, dtype=DTYPE)
        self.running_mean = np.zeros(spec.input_dim, dtype=DTYPE)
        self.running_var = np.ones(spec.input_dim, dtype=DTYPE)
        self.training = True
        self._version = 0

    # -- bookkeeping -----------------------------------------------------

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def touch(self):
        """Mark parameters as modified; outstanding caches become stale."""
        self._version += 1

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def copy(self) -> "Network":
        other = Network.__new__(Network)
        other.spec = self.spec
        other.params = self.snapshot()
        other.running_mean = self.running_mean.copy()
        other.running_var = self.running_var.copy()
        other.training = self.training
        other._version = 0
        return other

    def zero_(self):
        for v in self.params.values():
            v[...] = 0.0
        self.touch()
        return self

    # -- computation -----------------------------------------------------

    def forward(self, x, rng=None, training: bool | None = None, update_stats: bool = True):
        """Return ``(outputs, cache)`` for a batch ``x`` of shape (n, input_dim).

        In training mode batchnorm uses batch statistics (and, if
        ``update_stats``, folds them into the running averages) and dropout
        masks are drawn from ``rng``.  Inference mode is deterministic.
        """
        training = self.training if training is None else training
        x = np.asarray(x, dtype=DTYPE)
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise ShapeError(f"expected batch of width {self.spec.input_dim}, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise NumericError("non-finite value in network input")
        P = self.params
        rate = self.spec.dropout_rate
        xhat = inv_std = None
        if self.spec.use_input_batchnorm:
            if training:
                mu = x.mean(axis=0)
                var = x.var(axis=0)
                if update_stats:
                    n = x.shape[0]
                    unbiased = var * n / (n - 1) if n > 1 else var
                    self.running_mean = BN_MOMENTUM * self.running_mean + (1 - BN_MOMENTUM) * mu
                    self.running_var = BN_MOMENTUM * self.running_var + (1 - BN_MOMENTUM) * unbiased
            else:
                mu, var = self.running_mean, self.running_var
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (x - mu) * inv_std
            a0 = P["bn_gamma"] * xhat + P["bn_beta"]
        else:
            a0 = x

        drop = training and rate > 0.0
        if drop:
            rng = as_rng(rng)
            if rng is None:
                raise StateError("training-mode forward with dropout needs an rng")

        z1 = a0 @ P["W1"] + P["b1"]
        h1 = np.maximum(z1, 0.0)
        d1 = None
        if drop:
            d1 = (rng.random(h1.shape) >= rate) / (1.0 - rate)
            h1 = h1 * d1
        z2 = h1 @ P["W2"] + P["b2"]
        h2 = np.maximum(z2, 0.0)
        d2 = None
        if drop:
            d2 = (rng.random(h2.shape) >= rate) / (1.0 - rate)
            h2 = h2 * d2
        z3 = h2 @ P["W3"] + P["b3"]
        p = sigmoid(z3)
        out = np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
        cache = _Cache(id(self), self._version, training, x, xhat, inv_std, a0, z1, d1, h1, z2, d2, h2, p)
        return out, cache

    def __call__(self, x):
        """Inference-mode outputs only."""
        return self.forward(x, training=False)[0]

    def backward(self, cache: _Cache, grad_out):
        """Return ``(param_grads, input_grad)`` for upstream gradient ``grad_out``."""
        if cache.owner != id(self) or cache.version != self._version:
            raise StateError("cache does not belong to the current state of this network")
        P = self.params
        g = np.asarray(grad_out, dtype=DTYPE)
        if g.shape != cache.p.shape:
            raise ShapeError(f"output gradient shape {g.shape} != output shape {cache.p.shape}")
        p = cache.p
        inside = (p >= PROB_FLOOR) & (p <= 1.0 - PROB_FLOOR)
        dz3 = g * inside * p * (1.0 - p)
        grads = {}
        grads["W3"] = cache.h2.T @ dz3
        grads["b3"] = dz3.sum(axis=0)
        dh2 = dz3 @ P["W3"].T
        if cache.d2 is not None:
            dh2 = dh2 * cache.d2
        dz2 = dh2 * (cache.z2 > 0)
        grads["W2"] = cache.h1.T @ dz2
        grads["b2"] = dz2.sum(axis=0)
        dh1 = dz2 @ P["W2"].T
        if cache.d1 is not None:
            dh1 = dh1 * cache.d1
        dz1 = dh1 * (cache.z1 > 0)
        grads["W1"] = cache.a0.T @ dz1
        grads["b1"] = dz1.sum(axis=0)
        da0 = dz1 @ P["W1"].T
        if self.spec.use_input_batchnorm:
            xhat = cache.xhat
            grads["bn_gamma"] = (da0 * xhat).sum(axis=0)
            grads["bn_beta"] = da0.sum(axis=0)
            dxhat = da0 * P["bn_gamma"]
            if cache.training:
                n = xhat.shape[0]
                dx = (cache.inv_std / n) * (
                    n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
                )
            else:
                dx = dxhat * cache.inv_std
        else:
            dx = da0
        return {k: grads[k] for k in P}, dx


class Adam:
    """Bias-corrected Adam with coupled L2 weight decay, updating a network in place."""

    def __init__(self, net: Network, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        if weight_decay < 0:
            raise ConfigError(f"weight decay must be non-negative, got {weight_decay}")
        self.net = net
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(v) for k, v in net.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in net.params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]):
        params = self.net.params
        for k, g in grads.items():
            if g.shape != params[k].shape:
                raise ShapeError(f"gradient {k} has shape {g.shape}, parameter {params[k].shape}")
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {k}")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, theta in params.items():
            g = grads[k]
            if self.weight_decay:
                g = g + self.weight_decay * theta
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            theta -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
        self.net.touch()


# -- gradient checking --------------------------------------------------------


def finite_difference(fn: Callable[[], float], arrays: dict[str, np.ndarray], eps=1e-5):
    """Central differences of scalar ``fn()`` with respect to every entry of ``arrays``.

    Arrays are perturbed in place and restored exactly.
    """
    out = {}
    for name, a in arrays.items():
        grad = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = fn()
            flat[i] = orig - eps
            f_minus = fn()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * eps)
        out[name] = grad
    return out


def max_relative_error(analytic: dict, numeric: dict) -> float:
    worst = 0.0
    for k in analytic:
        a, n = analytic[k], numeric[k]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        if a.size:
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def grad_check(net: Network, loss_fn, batch, eps=1e-5, dropout_seed=0) -> float:
    """Max relative error between backprop and central differences.

    ``loss_fn(outputs)`` returns ``(loss, d_loss/d_outputs)``.  The forward
    pass runs in training mode with a fixed dropout seed and without touching
    the running statistics.
    """

    def run():
        out, cache = net.forward(batch, rng=dropout_seed, training=True, update_stats=False)
        return loss_fn(out), cache

    (loss, dout), cache = run()
    analytic, _ = net.backward(cache, dout)
    numeric = finite_difference(lambda: run()[0][0], net.params, eps)
    return max_relative_error(analytic, numeric)


# -- serialization -------------------------------------------------------------


def network_arrays(net: Network, prefix: str = "") -> dict[str, np.ndarray]:
    arrays = {f"{prefix}spec": np.array(json.dumps(asdict(net.spec), sort_keys=True))}
    for k, v in net.params.items():
        arrays[f"{prefix}param/{k}"] = v
    arrays[f"{prefix}running_mean"] = net.running_mean
    arrays[f"{prefix}running_var"] = net.running_var
    return arrays


def network_from_arrays(arrays, prefix: str = "") -> Network:
    spec = NetworkSpec(**json.loads(str(arrays[f"{prefix}spec"])))
    net = Network(spec, rng=0)
    for k in net.params:
        stored = np.asarray(arrays[f"{prefix}param/{k}"], dtype=DTYPE)
        if stored.shape != net.params[k].shape:
            raise ShapeError(f"stored parameter {k} has shape {stored.shape}")
        net.params[k] = stored.copy()
    net.running_mean = np.asarray(arrays[f"{prefix}running_mean"], dtype=DTYPE).copy()
    net.running_var = np.asarray(arrays[f"{prefix}running_var"], dtype=DTYPE).copy()
    net.training = False
    return net


def save_network(net: Network, path, config_hash: str = ""):
    arrays = network_arrays(net)
    arrays["config_hash"] = np.array(config_hash)
    np.savez(path, **arrays)


def load_network(path) -> tuple[Network, str]:
    with np.load(path, allow_pickle=False) as f:
        arrays = {k: f[k] for k in f.files}
    return network_from_arrays(arrays), str(arrays.get("config_hash", ""))


def dumps_network(net: Network, config_hash: str = "") -> bytes:
    buf = io.BytesIO()
    save_network(net, buf, config_hash)
    return buf.getvalue()
