"""Hyperparameter presets and the INI-style experiment configuration.

Config files are read with :mod:`configparser`.  Section and key names::

    [experiment]      preset, methods, missing_rates, seeds, split | folds,
                      stratified, split_seed, feature_subset, grid_lrs, n_draws
    [data]            source = synthetic | csv
                      synthetic: n_samples, n_features, class1_fraction, shift,
                                 correlation, label_noise, seed
                      csv: path, label_column, na_token, binary_columns,
                           numeric_columns
    [classifier]      epochs, batch_size, lr, weight_decay, hidden1, hidden2, dropout
    [gain]            epochs, batch_size, lr_g, lr_d, weight_decay_g,
                      weight_decay_d, p_hint, alpha, hidden1, hidden2, dropout
    [classifier_gain] the [gain] keys plus lr_c, weight_decay_c, beta, k_steps
    [mice]            initial_strategy, max_rounds, tolerance, ridge_regularizer

List values are comma separated.  Anything not given falls back to the preset.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

from .baselines import ChainedImputerConfig
from .classifier_gain import CgHyper
from .data import SplitPlan, SyntheticSpec
from .errors import ConfigError
from .gain import GainHyper
from .training import ClassifierHyper

METHODS = ("simple", "mice", "gain", "classifier_gain", "upper_bound")
BASELINES = ("simple", "mice", "gain")
DEFAULT_MISSING_RATES = (0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5)
DEFAULT_GRID = (0.0005, 0.001, 0.002)


@dataclass(frozen=True)
class Preset:
    classifier: ClassifierHyper
    gain: GainHyper
    classifier_gain: CgHyper


def _preset(c_hidden, c_batch, gain_epochs, gain_batch, gain_alpha, cg_p_hint, cg_alpha):
    classifier = ClassifierHyper(epochs=30, batch_size=c_batch, hidden1=c_hidden[0], hidden2=c_hidden[1], dropout=0.1)
    gain = GainHyper(epochs=gain_epochs, batch_size=gain_batch, p_hint=0.9, alpha=gain_alpha,
                     hidden1=64, hidden2=32, dropout=0.1)
    cg = CgHyper(epochs=50, batch_size=128, p_hint=cg_p_hint, alpha=cg_alpha, beta=1.0,
                 hidden1=64, hidden2=32, dropout=0.1,
                 c_hidden1=c_hidden[0], c_hidden2=c_hidden[1], c_dropout=0.1)
    return Preset(classifier, gain, cg)


PRESETS = {
    "ucsf": _preset((32, 16), 16, 50, 16, 5.0, 0.9, 5.0),
    "sepsis": _preset((128, 64), 128, 20, 128, 1.0, 0.5, 20.0),
}


@dataclass
class DataSource:
    kind: str = "synthetic"
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    seed: int = 0
    path: str | None = None
    label_column: str = "label"
    na_token: str = "NA"
    kind_overrides: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    source: DataSource = field(default_factory=DataSource)
    split: SplitPlan = field(default_factory=SplitPlan)
    missing_rates: tuple = DEFAULT_MISSING_RATES
    methods: tuple = METHODS
    seeds: tuple = (0, 1, 2, 3, 4)
    feature_subset: tuple | None = None
    classifier: ClassifierHyper = field(default_factory=lambda: replace(PRESETS["ucsf"].classifier))
    gain: GainHyper = field(default_factory=lambda: replace(PRESETS["ucsf"].gain))
    classifier_gain: CgHyper = field(default_factory=lambda: replace(PRESETS["ucsf"].classifier_gain))
    mice: ChainedImputerConfig = field(default_factory=ChainedImputerConfig)
    grid_lrs: tuple | None = None
    n_draws: int = 1
    preset: str = "ucsf"

    def validate(self):
        if not self.missing_rates or not self.methods or not self.seeds:
            raise ConfigError("missing_rates, methods and seeds must be non-empty")
        for r in self.missing_rates:
            if not 0.0 <= r < 1.0:
                raise ConfigError(f"missing rate {r} outside [0, 1)")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
        if self.source.kind not in ("synthetic", "csv"):
            raise ConfigError(f"unknown data source {self.source.kind!r}")
        if self.source.kind == "csv" and not self.source.path:
            raise ConfigError("csv data source needs a path")
        if self.grid_lrs is not None and (not self.grid_lrs or any(lr <= 0 for lr in self.grid_lrs)):
            raise ConfigError("grid_lrs must be positive learning rates")
        if self.n_draws < 1:
            raise ConfigError("n_draws must be >= 1")
        self.split.validate()
        self.classifier.validate()
        self.gain.validate()
        self.classifier_gain.validate()
        self.mice.validate()

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def method_hyper(self, method: str, lr: float | None = None):
        """Hyperparameters for ``method`` with every learning rate set to ``lr`` if given."""
        c = self.classifier
        cg = replace(self.classifier_gain, c_hidden1=c.hidden1, c_hidden2=c.hidden2, c_dropout=c.dropout)
        gain = self.gain
        if lr is not None:
            c = replace(c, lr=lr)
            gain = replace(gain, lr_g=lr, lr_d=lr)
            cg = replace(cg, lr_g=lr, lr_d=lr, lr_c=lr)
        return {"classifier": c, "gain": gain, "classifier_gain": cg}


# -- parsing ---------------------------------------------------------------------


def _floats(text):
    return tuple(float(t) for t in text.split(",") if t.strip())


def _ints(text):
    return tuple(int(t) for t in text.split(",") if t.strip())


def _names(text):
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _bool(text):
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _update_dataclass(obj, section, renames=None):
    """Return a copy of ``obj`` with keys of ``section`` applied, typed like the fields."""
    renames = renames or {}
    types = {f.name: type(getattr(obj, f.name)) for f in fields(obj)}
    changes = {}
    for key, raw in section.items():
        name = renames.get(key, key)
        if name not in types:
            raise ConfigError(f"[{section.name}] unknown key {key!r}")
        t = types[name]
        try:
            changes[name] = _bool(raw) if t is bool else t(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section.name}] {key}: {exc}") from None
    return replace(obj, **changes)


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        read = parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    return config_from_parser(parser)


def loads_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    return config_from_parser(parser)


def config_from_parser(parser: configparser.ConfigParser) -> ExperimentConfig:
    known = {"experiment", "data", "classifier", "gain", "classifier_gain", "mice"}
    extra = set(parser.sections()) - known
    if extra:
        raise ConfigError(f"unknown config sections {sorted(extra)}")
    exp = dict(parser["experiment"]) if parser.has_section("experiment") else {}
    preset_name = exp.pop("preset", "ucsf")
    if preset_name not in PRESETS:
        raise ConfigError(f"unknown preset {preset_name!r}; choose from {sorted(PRESETS)}")
    preset = PRESETS[preset_name]
    cfg = ExperimentConfig(
        classifier=replace(preset.classifier),
        gain=replace(preset.gain),
        classifier_gain=replace(preset.classifier_gain),
        preset=preset_name,
    )
    try:
        if "methods" in exp:
            cfg.methods = _names(exp.pop("methods"))
        if "missing_rates" in exp:
            cfg.missing_rates = _floats(exp.pop("missing_rates"))
        if "seeds" in exp:
            cfg.seeds = _ints(exp.pop("seeds"))
        if "feature_subset" in exp:
            cfg.feature_subset = _names(exp.pop("feature_subset")) or None
        if "grid_lrs" in exp:
            cfg.grid_lrs = _floats(exp.pop("grid_lrs")) or None
        if "n_draws" in exp:
            cfg.n_draws = int(exp.pop("n_draws"))
        stratified = _bool(exp.pop("stratified", "false"))
        split_seed = int(exp.pop("split_seed", "0"))
        if "folds" in exp and "split" in exp:
            raise ConfigError("[experiment] give either split or folds, not both")
        if "folds" in exp:
            cfg.split = SplitPlan(ratios=None, k_folds=int(exp.pop("folds")), stratified=stratified, seed=split_seed)
        else:
            ratios = _floats(exp.pop("split", "0.8, 0.1, 0.1"))
            cfg.split = SplitPlan(ratios=ratios, stratified=stratified, seed=split_seed)
    except ValueError as exc:
        raise ConfigError(f"[experiment] {exc}") from None
    if exp:
        raise ConfigError(f"[experiment] unknown keys {sorted(exp)}")

    if parser.has_section("data"):
        cfg.source = _parse_source(parser["data"])
    if parser.has_section("classifier"):
        cfg.classifier = _update_dataclass(cfg.classifier, parser["classifier"])
    if parser.has_section("gain"):
        cfg.gain = _update_dataclass(cfg.gain, parser["gain"])
    if parser.has_section("classifier_gain"):
        cfg.classifier_gain = _update_dataclass(cfg.classifier_gain, parser["classifier_gain"])
    if parser.has_section("mice"):
        cfg.mice = _update_dataclass(cfg.mice, parser["mice"])
    cfg.validate()
    return cfg


def _parse_source(section) -> DataSource:
    items = dict(section)
    kind = items.pop("source", "synthetic")
    src = DataSource(kind=kind)
    try:
        if kind == "synthetic":
            src.seed = int(items.pop("seed", "0"))
            spec = SyntheticSpec()
            changes = {}
            for f in fields(spec):
                if f.name in items:
                    changes[f.name] = type(getattr(spec, f.name))(items.pop(f.name))
            src.synthetic = replace(spec, **changes)
            src.synthetic.validate()
        elif kind == "csv":
            src.path = items.pop("path", None)
            src.label_column = items.pop("label_column", "label")
            src.na_token = items.pop("na_token", "NA")
            for name in _names(items.pop("binary_columns", "")):
                src.kind_overrides[name] = "binary"
            for name in _names(items.pop("numeric_columns", "")):
                src.kind_overrides[name] = "numeric"
        else:
            raise ConfigError(f"[data] unknown source {kind!r}")
    except ValueError as exc:
        raise ConfigError(f"[data] {exc}") from None
    if items:
        raise ConfigError(f"[data] unknown keys {sorted(items)}")
    return src


def dump_config(cfg: ExperimentConfig) -> str:
    """Render ``cfg`` back to the INI format (round-trips through :func:`loads_config`)."""
    lines = ["[experiment]", f"preset = {cfg.preset}"]
    lines.append("methods = " + ", ".join(cfg.methods))
    lines.append("missing_rates = " + ", ".join(repr(r) for r in cfg.missing_rates))
    lines.append("seeds = " + ", ".join(str(s) for s in cfg.seeds))
    if cfg.split.k_folds is not None:
        lines.append(f"folds = {cfg.split.k_folds}")
    else:
        lines.append("split = " + ", ".join(repr(r) for r in cfg.split.ratios))
    lines.append(f"stratified = {str(cfg.split.stratified).lower()}")
    lines.append(f"split_seed = {cfg.split.seed}")
    if cfg.feature_subset:
        lines.append("feature_subset = " + ", ".join(cfg.feature_subset))
    if cfg.grid_lrs:
        lines.append("grid_lrs = " + ", ".join(repr(r) for r in cfg.grid_lrs))
    lines.append(f"n_draws = {cfg.n_draws}")
    src = cfg.source
    lines += ["", "[data]", f"source = {src.kind}"]
    if src.kind == "synthetic":
        lines.append(f"seed = {src.seed}")
        lines += [f"{k} = {v!r}" for k, v in asdict(src.synthetic).items()]
    else:
        lines += [f"path = {src.path}", f"label_column = {src.label_column}", f"na_token = {src.na_token}"]
        binary = [k for k, v in src.kind_overrides.items() if v == "binary"]
        numeric = [k for k, v in src.kind_overrides.items() if v == "numeric"]
        if binary:
            lines.append("binary_columns = " + ", ".join(binary))
        if numeric:
            lines.append("numeric_columns = " + ", ".join(numeric))
    for name in ("classifier", "gain", "classifier_gain", "mice"):
        lines += ["", f"[{name}]"]
        for k, v in asdict(getattr(cfg, name)).items():
            lines.append(f"{k} = {str(v).lower() if isinstance(v, bool) else v!r}".replace("'", ""))
    return "\n".join(lines) + "\n"
