"""Classification and imputation metrics, relative improvement rates, aggregation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import MetricUndefinedError, UsageError

METRIC_NAMES = ("macro_f1", "auc_roc", "imputation_rmse")


def _f1(tp, fp, fn) -> float:
    denom = 2 * tp + fp + fn
    # no predicted and no actual members of the class, or precision + recall = 0
    if denom == 0 or tp == 0:
        return 0.0
    return 2 * tp / denom


def macro_f1(labels, scores, threshold: float = 0.5) -> float:
    """Unweighted mean of the two class-wise F1 scores at ``threshold``.

    A score ``>= threshold`` predicts class 1.
    """
    labels = np.asarray(labels).astype(int).ravel()
    scores = np.asarray(scores, dtype=float).ravel()
    if labels.size == 0:
        raise UsageError("macro_f1 needs at least one sample")
    if labels.shape != scores.shape:
        raise UsageError(f"labels {labels.shape} and scores {scores.shape} differ in length")
    pred = (scores >= threshold).astype(int)
    tp = int(np.sum((pred == 1) & (labels == 1)))
    tn = int(np.sum((pred == 0) & (labels == 0)))
    fp = int(np.sum((pred == 1) & (labels == 0)))
    fn = int(np.sum((pred == 0) & (labels == 1)))
    return (_f1(tp, fp, fn) + _f1(tn, fn, fp)) / 2.0


def _average_ranks(x: np.ndarray) -> np.ndarray:
    _, inverse, counts = np.unique(x, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    starts = ends - counts
    # mean of the 1-based positions starts+1 .. ends
    return ((starts + 1 + ends) / 2.0)[inverse]


def auc_roc(labels, scores) -> float:
    """Area under the ROC curve as the Mann-Whitney rank statistic (ties count 1/2)."""
    labels = np.asarray(labels).astype(int).ravel()
    scores = np.asarray(scores, dtype=float).ravel()
    if labels.shape != scores.shape:
        raise UsageError(f"labels {labels.shape} and scores {scores.shape} differ in length")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("AUC-ROC needs both classes present")
    ranks = _average_ranks(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def imputation_rmse(truth, imputed, simulated_mask, original_mask) -> tuple[float, int]:
    """RMSE over cells hidden by simulation but observed originally.

    Returns ``(rmse, n_cells)``.
    """
    truth = np.asarray(truth, dtype=float)
    imputed = np.asarray(imputed, dtype=float)
    sim = np.asarray(simulated_mask)
    orig = np.asarray(original_mask)
    if not (truth.shape == imputed.shape == sim.shape == orig.shape):
        raise UsageError("imputation_rmse inputs must share one shape")
    cells = (sim == 0) & (orig == 1)
    n = int(cells.sum())
    if n == 0:
        raise MetricUndefinedError("no cells were hidden by simulation")
    err = truth[cells] - imputed[cells]
    return float(np.sqrt(np.mean(err * err))), n


def rir(model_metric: float, best_baseline_metric: float) -> float:
    """Relative improvement rate over the best baseline."""
    if best_baseline_metric == 0:
        raise ZeroDivisionError("relative improvement rate undefined for a zero baseline")
    return (model_metric - best_baseline_metric) / best_baseline_metric


def rgrr(model_metric: float, best_baseline_metric: float, upper_bound_metric: float) -> float:
    """Share of the baseline-to-upper-bound gap closed by the model."""
    gap = upper_bound_metric - best_baseline_metric
    if gap == 0:
        raise ZeroDivisionError("relative gap reduction rate undefined when upper bound equals baseline")
    return (model_metric - best_baseline_metric) / gap


@dataclass
class RunResult:
    method: str
    missing_rate: float
    seed: int
    macro_f1: float | None = None
    auc_roc: float | None = None
    imputation_rmse: float | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Summary:
    n: int
    mean: float
    std: float


def mean_std(values: Sequence[float]) -> Summary:
    vals = [float(v) for v in values]
    if not vals:
        return Summary(0, math.nan, math.nan)
    mean = sum(vals) / len(vals)
    std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
    return Summary(len(vals), mean, std)


def aggregate(results: Iterable[RunResult], keys=("method", "missing_rate")) -> dict[tuple, dict[str, Summary]]:
    """Mean and sample standard deviation of each metric per group of successful runs."""
    groups: dict[tuple, list[RunResult]] = {}
    for r in results:
        if r.ok:
            groups.setdefault(tuple(getattr(r, k) for k in keys), []).append(r)
    out = {}
    for key in sorted(groups):
        runs = groups[key]
        out[key] = {
            name: mean_std([getattr(r, name) for r in runs if getattr(r, name) is not None])
            for name in METRIC_NAMES
        }
    return out
