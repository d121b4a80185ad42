"""Non-adversarial imputers: column mean/mode and chained ridge regressions."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import BINARY, MaskedDataset
from .errors import ConfigError, DataError

log = logging.getLogger(__name__)


def _column_fill(data: MaskedDataset) -> np.ndarray:
    obs = data.mask == 1
    counts = obs.sum(axis=0)
    if (counts == 0).any():
        bad = [data.feature_names[j] for j in np.flatnonzero(counts == 0)]
        raise DataError(f"features with no observed value: {bad}")
    fill = np.where(obs, data.values, 0.0).sum(axis=0) / counts
    for j, kind in enumerate(data.feature_kinds):
        if kind == BINARY:
            ones = data.values[obs[:, j], j].sum()
            # ties go to the smaller value
            fill[j] = 1.0 if ones > counts[j] - ones else 0.0
    return fill


class SimpleImputer:
    """Mean for numeric columns, most frequent value for binary ones."""

    def fit(self, data: MaskedDataset) -> "SimpleImputer":
        self.fill_ = _column_fill(data)
        return self

    def transform(self, data: MaskedDataset) -> np.ndarray:
        return np.where(data.mask == 1, data.values, self.fill_)


def simple_impute(data: MaskedDataset) -> np.ndarray:
    return SimpleImputer().fit(data).transform(data)


@dataclass(frozen=True)
class ChainedImputerConfig:
    initial_strategy: str = "mean"
    max_rounds: int = 100
    tolerance: float = 1e-3
    ridge_regularizer: float = 1e-3

    def validate(self):
        if self.initial_strategy != "mean":
            raise ConfigError(f"unsupported initial strategy {self.initial_strategy!r}")
        if self.max_rounds < 1:
            raise ConfigError("max_rounds must be >= 1")
        if self.tolerance <= 0:
            raise ConfigError("tolerance must be positive")
        if self.ridge_regularizer < 0:
            raise ConfigError("ridge_regularizer must be non-negative")


def _ridge(X, y, lam):
    """Least squares with an unpenalised intercept; returns (intercept, coef)."""
    mx = X.mean(axis=0)
    my = y.mean()
    Xc = X - mx
    A = Xc.T @ Xc + lam * np.eye(X.shape[1])
    coef = np.linalg.solve(A, Xc.T @ (y - my))
    if not np.all(np.isfinite(coef)):
        raise np.linalg.LinAlgError("non-finite ridge solution")
    return my - mx @ coef, coef


@dataclass
class ChainedImputer:
    """Iterative per-feature ridge regression imputation.

    ``fit`` runs the rounds on the training data and keeps the last model per
    feature; ``transform`` replays those fixed models on new data until the
    imputed cells stop moving.
    """

    config: ChainedImputerConfig = field(default_factory=ChainedImputerConfig)

    def fit(self, data: MaskedDataset, seed=None) -> "ChainedImputer":
        # seed is accepted for interface symmetry; the procedure has no randomness
        cfg = self.config
        cfg.validate()
        self.initial_ = _column_fill(data)
        self.kinds_ = data.feature_kinds
        obs = data.mask == 1
        miss_rate = 1.0 - obs.mean(axis=0)
        self.order_ = [int(j) for j in np.argsort(miss_rate, kind="stable") if miss_rate[j] > 0]
        self.models_: dict[int, tuple[float, np.ndarray] | None] = {}
        self.diagnostics: list[str] = []
        X = np.where(obs, data.values, self.initial_)
        self.n_rounds_ = 0
        self.converged_ = True
        for rnd in range(cfg.max_rounds if self.order_ else 0):
            self.n_rounds_ = rnd + 1
            change = 0.0
            for j in self.order_:
                rows = obs[:, j]
                others = np.arange(X.shape[1]) != j
                try:
                    model = _ridge(X[rows][:, others], X[rows, j], cfg.ridge_regularizer)
                except np.linalg.LinAlgError:
                    msg = f"round {rnd + 1}: regression for {data.feature_names[j]!r} is singular, using the column mean"
                    log.warning(msg)
                    self.diagnostics.append(msg)
                    model = None
                self.models_[j] = model
                new = self._predict(j, X[~rows][:, others])
                change = max(change, float(np.max(np.abs(new - X[~rows, j]))))
                X[~rows, j] = new
            if change < cfg.tolerance:
                break
        else:
            self.converged_ = not self.order_
        # features complete in training still need a model in case new data misses them
        for j in range(X.shape[1]):
            if j not in self.models_ and X.shape[1] > 1:
                others = np.arange(X.shape[1]) != j
                try:
                    self.models_[j] = _ridge(X[:, others], X[:, j], cfg.ridge_regularizer)
                except np.linalg.LinAlgError:
                    self.models_[j] = None
        self.fitted_ = X
        return self

    def _predict(self, j, X_others):
        model = self.models_.get(j)
        if model is None:
            pred = np.full(X_others.shape[0], self.initial_[j])
        else:
            intercept, coef = model
            pred = intercept + X_others @ coef
        if self.kinds_[j] == BINARY:
            pred = np.clip(pred, 0.0, 1.0)
        return pred

    def transform(self, data: MaskedDataset) -> np.ndarray:
        obs = data.mask == 1
        X = np.where(obs, data.values, self.initial_)
        if obs.all():
            return X
        d = X.shape[1]
        order = self.order_ + [j for j in range(d) if j not in self.order_]
        for _ in range(self.config.max_rounds):
            change = 0.0
            for j in order:
                rows = obs[:, j]
                if rows.all():
                    continue
                others = np.arange(d) != j
                new = self._predict(j, X[~rows][:, others])
                change = max(change, float(np.max(np.abs(new - X[~rows, j]))))
                X[~rows, j] = new
            if change < self.config.tolerance:
                break
        return X


def mice_impute(data: MaskedDataset, config: ChainedImputerConfig | None = None, seed=None) -> np.ndarray:
    imp = ChainedImputer(config or ChainedImputerConfig()).fit(data, seed)
    return imp.fitted_
