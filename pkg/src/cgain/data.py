"""Masked tabular datasets: scaling, MCAR masking, synthetic data, CSV I/O, splits."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, IngestionError, ShapeError, StateError

log = logging.getLogger(__name__)

NUMERIC = "numeric"
BINARY = "binary"

MCAR_MAX_REDRAWS = 100


@dataclass
class MaskedDataset:
    """Values, observation mask (1 = observed) and binary labels.

    Missing cells hold a placeholder (0.0) that is never read where the mask
    is 0.  ``labels`` may be ``None`` for unlabelled inference inputs.
    """

    values: np.ndarray
    mask: np.ndarray
    labels: np.ndarray | None
    feature_kinds: tuple[str, ...] = ()
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.values.ndim != 2 or self.mask.shape != self.values.shape:
            raise ShapeError(f"values {self.values.shape} and mask {self.mask.shape} must be equal 2-D shapes")
        n, d = self.values.shape
        if not self.feature_kinds:
            self.feature_kinds = (NUMERIC,) * d
        if not self.feature_names:
            self.feature_names = tuple(f"x{j + 1}" for j in range(d))
        self.feature_kinds = tuple(self.feature_kinds)
        self.feature_names = tuple(self.feature_names)
        if len(self.feature_kinds) != d or len(self.feature_names) != d:
            raise ShapeError("feature_kinds / feature_names length must equal the number of columns")
        if set(self.feature_kinds) - {NUMERIC, BINARY}:
            raise DataError(f"unknown feature kind in {self.feature_kinds}")
        if not np.isin(self.mask, (0.0, 1.0)).all():
            raise DataError("mask entries must be 0 or 1")
        if n and (self.mask.sum(axis=1) == 0).any():
            raise DataError("every row needs at least one observed entry")
        if not np.isfinite(self.values[self.mask == 1]).all():
            raise DataError("observed values must be finite")
        self.values = np.where(self.mask == 1, self.values, 0.0)
        if self.labels is not None:
            self.labels = np.asarray(self.labels).astype(np.int64)
            if self.labels.shape != (n,):
                raise ShapeError(f"labels shape {self.labels.shape} != ({n},)")
            if not np.isin(self.labels, (0, 1)).all():
                raise DataError("labels must be 0 or 1")

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def subset(self, rows) -> "MaskedDataset":
        rows = np.asarray(rows)
        return replace(
            self,
            values=self.values[rows],
            mask=self.mask[rows],
            labels=None if self.labels is None else self.labels[rows],
        )

    def with_values(self, values) -> "MaskedDataset":
        return replace(self, values=values)

    def without_labels(self) -> "MaskedDataset":
        return replace(self, labels=None)

    def feature_index(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise KeyError(name) from None


# -- scaling -------------------------------------------------------------------


@dataclass
class ScalerState:
    mins: np.ndarray
    maxs: np.ndarray
    kinds: tuple[str, ...]

    def matches(self, data: MaskedDataset) -> bool:
        return len(self.kinds) == data.n_features and tuple(self.kinds) == tuple(data.feature_kinds)


def fit_scaler(data: MaskedDataset) -> ScalerState:
    obs = data.mask == 1
    mins = np.where(obs, data.values, np.inf).min(axis=0)
    maxs = np.where(obs, data.values, -np.inf).max(axis=0)
    empty = ~obs.any(axis=0)
    mins[empty] = 0.0
    maxs[empty] = 0.0
    binary = np.array([k == BINARY for k in data.feature_kinds])
    mins[binary] = 0.0
    maxs[binary] = 1.0
    return ScalerState(mins, maxs, tuple(data.feature_kinds))


def _check_scaler(data, state):
    if not state.matches(data):
        raise StateError("scaler was fitted on a dataset with different features")


def scale(data: MaskedDataset, state: ScalerState) -> MaskedDataset:
    """Min-max scale observed numeric cells; constant columns map to 0."""
    _check_scaler(data, state)
    span = state.maxs - state.mins
    safe = np.where(span > 0, span, 1.0)
    scaled = np.where(span > 0, (data.values - state.mins) / safe, 0.0)
    binary = np.array([k == BINARY for k in state.kinds])
    scaled[:, binary] = data.values[:, binary]
    return data.with_values(scaled)


def unscale_values(values, state: ScalerState) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    span = state.maxs - state.mins
    out = values * span + state.mins
    binary = np.array([k == BINARY for k in state.kinds])
    out[:, binary] = values[:, binary]
    return out


def unscale(data: MaskedDataset, state: ScalerState) -> MaskedDataset:
    _check_scaler(data, state)
    return data.with_values(unscale_values(data.values, state))


# -- synthetic data --------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Two-class Gaussian data with a shared latent factor.

    Each feature is ``shift * y + sqrt(c) * f + sqrt(1 - c) * e`` with one
    latent ``f`` per row, so features have unit within-class variance and
    pairwise correlation ``c``.  Labels are flipped with probability
    ``label_noise`` after the features are drawn.
    """

    n_samples: int = 2000
    n_features: int = 10
    class1_fraction: float = 0.5
    shift: float = 2.0
    correlation: float = 0.5
    label_noise: float = 0.0

    def validate(self):
        if self.n_samples < 2 or self.n_features < 1:
            raise ConfigError("synthetic data needs n_samples >= 2 and n_features >= 1")
        if not 0.0 < self.class1_fraction < 1.0:
            raise ConfigError("class1_fraction must be in (0, 1)")
        if not 0.0 <= self.correlation < 1.0:
            raise ConfigError("correlation must be in [0, 1)")
        if not 0.0 <= self.label_noise < 1.0:
            raise ConfigError("label_noise must be in [0, 1)")


def generate_synthetic(spec: SyntheticSpec, seed=0) -> MaskedDataset:
    spec.validate()
    rng = np.random.default_rng(seed)
    n, d = spec.n_samples, spec.n_features
    y = (rng.random(n) < spec.class1_fraction).astype(np.int64)
    latent = rng.standard_normal((n, 1))
    noise = rng.standard_normal((n, d))
    x = spec.shift * y[:, None] + np.sqrt(spec.correlation) * latent + np.sqrt(1.0 - spec.correlation) * noise
    flip = rng.random(n) < spec.label_noise
    labels = np.where(flip, 1 - y, y)
    return MaskedDataset(x, np.ones((n, d)), labels)


# -- MCAR masking ------------------------------------------------------------------


def apply_mcar(data: MaskedDataset, rate: float, feature_subset: Sequence[int] | None = None, seed=0) -> MaskedDataset:
    """Independently hide each observed cell in ``feature_subset`` with probability ``rate``.

    Rows that would lose every observed entry are redrawn; after
    ``MCAR_MAX_REDRAWS`` failures one of the row's observed entries is kept.
    """
    if not 0.0 <= rate <= 1.0:
        raise ConfigError(f"missing rate must be in [0, 1], got {rate}")
    d = data.n_features
    cols = np.arange(d) if feature_subset is None else np.unique(np.asarray(feature_subset, dtype=int))
    if cols.size == 0:
        raise ConfigError("feature_subset must not be empty")
    if cols.min() < 0 or cols.max() >= d:
        raise ConfigError(f"feature_subset {cols.tolist()} out of range for {d} features")
    in_subset = np.zeros(d, dtype=bool)
    in_subset[cols] = True
    observed = data.mask == 1
    safe_rows = (observed & ~in_subset).any(axis=1)
    if rate == 1.0 and not safe_rows.all():
        raise ConfigError("rate 1 over this feature subset would leave rows with no observed entry")

    rng = np.random.default_rng(seed)
    hide = (rng.random(observed.shape) < rate) & observed & in_subset
    new_mask = observed & ~hide
    for i in np.flatnonzero(~new_mask.any(axis=1)):
        candidates = np.flatnonzero(observed[i] & in_subset)
        for _ in range(MCAR_MAX_REDRAWS):
            row_hide = (rng.random(d) < rate) & observed[i] & in_subset
            if (observed[i] & ~row_hide).any():
                new_mask[i] = observed[i] & ~row_hide
                break
        else:
            new_mask[i] = False
            new_mask[i, rng.choice(candidates)] = True
    return replace(data, mask=new_mask.astype(np.float64))


# -- CSV ingestion -------------------------------------------------------------------


def load_csv(
    path,
    na_token: str = "NA",
    label_column: str = "label",
    kind_overrides: dict[str, str] | None = None,
) -> MaskedDataset:
    """Read a headed CSV; ``na_token`` cells become missing.

    Kinds are inferred per column: observed values all in {0, 1} means
    binary.  Rows with no observed feature are dropped.
    """
    kind_overrides = kind_overrides or {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        if label_column not in header:
            raise IngestionError(f"{path}: label column {label_column!r} not in header")
        li = header.index(label_column)
        names = [h for j, h in enumerate(header) if j != li]
        unknown = set(kind_overrides) - set(names)
        if unknown:
            raise IngestionError(f"kind overrides for unknown columns: {sorted(unknown)}")
        rows, masks, labels = [], [], []
        for lineno, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise IngestionError(f"{path}:{lineno}: expected {len(header)} fields, got {len(record)}")
            raw_label = record[li].strip()
            if raw_label in ("", na_token):
                raise IngestionError(f"{path}:{lineno}: missing label")
            try:
                label = float(raw_label)
            except ValueError:
                raise IngestionError(f"{path}:{lineno}: unparseable label {raw_label!r}") from None
            if label not in (0.0, 1.0):
                raise IngestionError(f"{path}:{lineno}: label must be 0 or 1, got {raw_label!r}")
            vals, m = [], []
            for j, cell in enumerate(record):
                if j == li:
                    continue
                cell = cell.strip()
                if cell == na_token:
                    vals.append(0.0)
                    m.append(0.0)
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise IngestionError(
                        f"{path}:{lineno}: unparseable value {cell!r} in column {header[j]!r}"
                    ) from None
                if not np.isfinite(v):
                    raise IngestionError(f"{path}:{lineno}: non-finite value in column {header[j]!r}")
                vals.append(v)
                m.append(1.0)
            rows.append(vals)
            masks.append(m)
            labels.append(int(label))
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    mask = np.array(masks, dtype=np.float64).reshape(len(rows), len(names))
    keep = mask.sum(axis=1) > 0
    if not keep.all():
        log.warning("dropping %d rows with no observed feature", int((~keep).sum()))
    values, mask, labels = values[keep], mask[keep], np.array(labels, dtype=np.int64)[keep]
    kinds = []
    for j, name in enumerate(names):
        if name in kind_overrides:
            kind = kind_overrides[name]
            if kind not in (NUMERIC, BINARY):
                raise IngestionError(f"unknown kind {kind!r} for column {name!r}")
        else:
            obs = values[mask[:, j] == 1, j]
            kind = BINARY if obs.size and np.isin(obs, (0.0, 1.0)).all() else NUMERIC
        kinds.append(kind)
    return MaskedDataset(values, mask, labels, tuple(kinds), tuple(names))


# -- dataset files -----------------------------------------------------------------------
#
# <prefix>.values.csv  header = feature names (+ "label"), missing cells empty
# <prefix>.mask.csv    header = feature names, 0/1 cells
# <prefix>.meta        "key = json value" lines: format, feature_names,
#                      feature_kinds, has_labels, scaler_mins, scaler_maxs

DATASET_FORMAT = "cgain-dataset-1"


def _fmt(v: float) -> str:
    return repr(float(v))


def save_dataset(data: MaskedDataset, prefix, scaler: ScalerState | None = None):
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    names = list(data.feature_names)
    with open(f"{prefix}.values.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + (["label"] if data.labels is not None else []))
        for i in range(data.n_samples):
            row = [_fmt(v) if m else "" for v, m in zip(data.values[i], data.mask[i])]
            if data.labels is not None:
                row.append(str(int(data.labels[i])))
            w.writerow(row)
    with open(f"{prefix}.mask.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(data.n_samples):
            w.writerow([str(int(m)) for m in data.mask[i]])
    meta = {
        "format": DATASET_FORMAT,
        "feature_names": names,
        "feature_kinds": list(data.feature_kinds),
        "has_labels": data.labels is not None,
    }
    if scaler is not None:
        meta["scaler_mins"] = [float(v) for v in scaler.mins]
        meta["scaler_maxs"] = [float(v) for v in scaler.maxs]
    with open(f"{prefix}.meta", "w") as fh:
        for k, v in meta.items():
            fh.write(f"{k} = {json.dumps(v)}\n")


def read_meta(path) -> dict:
    meta = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise IngestionError(f"{path}:{lineno}: expected 'key = value'")
            meta[key.strip()] = json.loads(value.strip())
    return meta


def load_dataset(prefix) -> tuple[MaskedDataset, ScalerState | None]:
    meta = read_meta(f"{prefix}.meta")
    if meta.get("format") != DATASET_FORMAT:
        raise IngestionError(f"{prefix}.meta: unsupported format {meta.get('format')!r}")
    names = meta["feature_names"]
    d = len(names)
    with open(f"{prefix}.mask.csv", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        mask = np.array([[float(c) for c in row] for row in reader if row], dtype=np.float64).reshape(-1, d)
    values = np.zeros_like(mask)
    labels = []
    with open(f"{prefix}.values.csv", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for i, row in enumerate(r for r in reader if r):
            for j in range(d):
                if mask[i, j]:
                    values[i, j] = float(row[j])
            if meta["has_labels"]:
                labels.append(int(row[d]))
    data = MaskedDataset(
        values,
        mask,
        np.array(labels, dtype=np.int64) if meta["has_labels"] else None,
        tuple(meta["feature_kinds"]),
        tuple(names),
    )
    scaler = None
    if "scaler_mins" in meta:
        scaler = ScalerState(np.array(meta["scaler_mins"]), np.array(meta["scaler_maxs"]), data.feature_kinds)
    return data, scaler


# -- splitting -----------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitPlan:
    ratios: tuple[float, float, float] | None = (0.8, 0.1, 0.1)
    k_folds: int | None = None
    stratified: bool = False
    seed: int = 0

    def validate(self):
        if (self.ratios is None) == (self.k_folds is None):
            raise ConfigError("a split plan needs exactly one of ratios or k_folds")
        if self.ratios is not None:
            if len(self.ratios) != 3 or any(r < 0 for r in self.ratios) or self.ratios[0] <= 0 or self.ratios[2] <= 0:
                raise ConfigError(f"bad split ratios {self.ratios}")
            if abs(sum(self.ratios) - 1.0) > 1e-9:
                raise ConfigError(f"split ratios must sum to 1, got {self.ratios}")
        elif self.k_folds < 2:
            raise ConfigError("k_folds must be >= 2")


@dataclass
class Split:
    train: np.ndarray
    dev: np.ndarray | None
    test: np.ndarray
    extra: dict = field(default_factory=dict)


def _ratio_sizes(n, ratios):
    n_dev = int(round(n * ratios[1]))
    n_test = int(round(n * ratios[2]))
    return n - n_dev - n_test, n_dev, n_test


def split(data: MaskedDataset, plan: SplitPlan) -> list[Split]:
    plan.validate()
    n = data.n_samples
    rng = np.random.default_rng(plan.seed)
    if plan.stratified:
        if data.labels is None:
            raise DataError("stratified split needs labels")
        groups = [np.flatnonzero(data.labels == c) for c in (0, 1)]
        groups = [rng.permutation(g) for g in groups if g.size]
    else:
        groups = [rng.permutation(n)]

    if plan.ratios is not None:
        parts = [[], [], []]
        for g in groups:
            n_tr, n_dev, _ = _ratio_sizes(g.size, plan.ratios)
            parts[0].append(g[:n_tr])
            parts[1].append(g[n_tr : n_tr + n_dev])
            parts[2].append(g[n_tr + n_dev :])
        train, dev, test = (np.sort(np.concatenate(p)) for p in parts)
        if train.size == 0 or test.size == 0:
            raise ConfigError(f"split ratios {plan.ratios} leave an empty train or test set for n={n}")
        return [Split(train, dev if plan.ratios[1] > 0 else None, test)]

    k = plan.k_folds
    if plan.stratified and min(g.size for g in groups) < k:
        raise ConfigError(f"{k} folds exceed the sample count of the smallest class")
    if n < k:
        raise ConfigError(f"{k} folds exceed {n} samples")
    folds = [[] for _ in range(k)]
    offset = 0
    for g in groups:
        for i, idx in enumerate(g):
            folds[(offset + i) % k].append(idx)
        offset = (offset + g.size) % k
    folds = [np.sort(np.array(f, dtype=np.int64)) for f in folds]
    out = []
    for j in range(k):
        train = np.sort(np.concatenate([folds[i] for i in range(k) if i != j]))
        out.append(Split(train, None, folds[j]))
    return out


# -- missingness report ---------------------------------------------------------------------


@dataclass
class MissingReport:
    per_feature: list[tuple[str, float]]
    overall: float

    def format(self) -> str:
        width = max([len("feature")] + [len(n) for n, _ in self.per_feature])
        lines = [f"{'missing rate':>12}  feature", f"{'-' * 12}  {'-' * width}"]
        lines += [f"{100 * r:11.2f}%  {n}" for n, r in self.per_feature]
        lines.append(f"{100 * self.overall:11.2f}%  (all observations)")
        return "\n".join(lines)


def missing_report(data: MaskedDataset) -> MissingReport:
    rates = 1.0 - data.mask.mean(axis=0) if data.n_samples else np.zeros(data.n_features)
    order = sorted(range(data.n_features), key=lambda j: (-rates[j], j))
    overall = float(1.0 - data.mask.mean()) if data.mask.size else 0.0
    return MissingReport([(data.feature_names[j], float(rates[j])) for j in order], overall)
