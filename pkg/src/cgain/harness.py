"""Experiment runner: missing-rate sweeps over baselines, GAIN and Classifier-GAIN."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import ChainedImputer, SimpleImputer
from .classifier_gain import predict, train_classifier_gain
from .config import BASELINES, METHODS, ExperimentConfig
from .data import (
    MaskedDataset,
    apply_mcar,
    fit_scaler,
    generate_synthetic,
    load_csv,
    scale,
    split,
    unscale_values,
)
from .errors import ConfigError, DataError, MetricUndefinedError, UsageError
from .gain import impute_full, train_gain
from .metrics import RunResult, aggregate, auc_roc, imputation_rmse, macro_f1, rgrr, rir
from .training import train_classifier

log = logging.getLogger(__name__)

WORKERS_ENV = "CGAIN_WORKERS"
SWEEP_FORMAT = "cgain-sweep-1"
METHOD_LABELS = {
    "classifier_gain": "Classifier-GAIN",
    "simple": "Simple imputation",
    "mice": "MICE",
    "gain": "GAIN",
    "upper_bound": "Upper bound",
}


def derive_seed(*parts) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _rate_key(rate: float) -> int:
    return int(round(rate * 1_000_000))


def mask_seed(seed, rate) -> int:
    return derive_seed(seed, _rate_key(rate), 0)


def model_seed(seed, rate) -> int:
    return derive_seed(seed, _rate_key(rate), 1)


def load_source(cfg: ExperimentConfig) -> MaskedDataset:
    src = cfg.source
    if src.kind == "synthetic":
        return generate_synthetic(src.synthetic, src.seed)
    return load_csv(src.path, src.na_token, src.label_column, src.kind_overrides)


def feature_indices(cfg: ExperimentConfig, data: MaskedDataset):
    if not cfg.feature_subset:
        return None
    try:
        return [data.feature_index(name) for name in cfg.feature_subset]
    except KeyError as exc:
        raise ConfigError(f"feature_subset names unknown feature {exc}") from None


# -- one method on one split ------------------------------------------------------


def fit_predict(method: str, train: MaskedDataset, evaluate: MaskedDataset, cfg: ExperimentConfig, seed: int,
                lr: float | None = None):
    """Fit ``method`` on ``train`` and score ``evaluate``.

    Both datasets are in original units.  ``evaluate`` should carry no labels;
    nothing here reads them.  Returns ``(scores, imputed_values)`` with the
    imputed evaluation matrix mapped back to original units.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    hp = cfg.method_hyper(method, lr)
    scaler = fit_scaler(train)
    tr = scale(train, scaler)
    ev = scale(evaluate, scaler)
    if method == "classifier_gain":
        triple = train_classifier_gain(tr, hp["classifier_gain"], seed, scaler)
        x_ev, scores = predict(triple, ev, derive_seed(seed, 2), cfg.n_draws)
        return scores, unscale_values(x_ev, scaler)
    if method in ("simple", "upper_bound"):
        imp = SimpleImputer().fit(tr)
        x_tr, x_ev = imp.transform(tr), imp.transform(ev)
    elif method == "mice":
        imp = ChainedImputer(cfg.mice).fit(tr, seed)
        x_tr, x_ev = imp.fitted_, imp.transform(ev)
    else:
        model = train_gain(tr, hp["gain"], seed)
        x_tr = impute_full(model.G, tr, derive_seed(seed, 1), cfg.n_draws)
        x_ev = impute_full(model.G, ev, derive_seed(seed, 2), cfg.n_draws)
    clf = train_classifier(x_tr, tr.labels, hp["classifier"], seed)
    return clf.predict_proba(x_ev), unscale_values(x_ev, scaler)


# -- sweep -------------------------------------------------------------------------


@dataclass
class SweepReport:
    provenance: dict
    runs: list[RunResult]
    aggregates: list[dict] = field(default_factory=list)
    relative: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "format": SWEEP_FORMAT,
            "provenance": self.provenance,
            "runs": [r.to_dict() for r in self.runs],
            "aggregates": self.aggregates,
            "relative": self.relative,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "SweepReport":
        if d.get("format") != SWEEP_FORMAT:
            raise DataError(f"not a sweep results document (format {d.get('format')!r})")
        return cls(d["provenance"], [RunResult(**r) for r in d["runs"]], d["aggregates"], d["relative"])

    @classmethod
    def load(cls, path) -> "SweepReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def cell(self, method, rate):
        for a in self.aggregates:
            if a["method"] == method and a["missing_rate"] == rate:
                return a
        return None

    def failures(self) -> list[RunResult]:
        return [r for r in self.runs if not r.ok]


def _tasks(cfg: ExperimentConfig):
    tasks = []
    for seed in cfg.seeds:
        if "upper_bound" in cfg.methods:
            tasks.append(("upper_bound", 0.0, seed))
        for rate in cfg.missing_rates:
            for method in cfg.methods:
                if method != "upper_bound":
                    tasks.append((method, rate, seed))
    return tasks


def run_task(task, cfg: ExperimentConfig, full: MaskedDataset, splits, lrs: dict) -> RunResult:
    method, rate, seed = task
    result = RunResult(method, float(rate), int(seed))
    try:
        if method == "upper_bound":
            masked = full
        else:
            masked = apply_mcar(full, rate, feature_indices(cfg, full), seed=mask_seed(seed, rate))
        mseed = model_seed(seed, rate)
        scores, labels, truth, imputed, sim_mask, orig_mask = [], [], [], [], [], []
        for sp in splits:
            train = masked.subset(sp.train)
            test = masked.subset(sp.test).without_labels()
            s, x_ev = fit_predict(method, train, test, cfg, mseed, lrs.get(method))
            scores.append(s)
            imputed.append(x_ev)
            labels.append(full.labels[sp.test])
            truth.append(full.values[sp.test])
            sim_mask.append(masked.mask[sp.test])
            orig_mask.append(full.mask[sp.test])
        scores, labels = np.concatenate(scores), np.concatenate(labels)
        if not np.all(np.isfinite(scores)):
            raise DataError("non-finite prediction scores")
        result.macro_f1 = macro_f1(labels, scores)
        result.auc_roc = auc_roc(labels, scores)
        if method != "upper_bound":
            try:
                result.imputation_rmse, _ = imputation_rmse(
                    np.concatenate(truth), np.concatenate(imputed), np.concatenate(sim_mask), np.concatenate(orig_mask)
                )
            except MetricUndefinedError:
                result.imputation_rmse = None
    except Exception as exc:  # noqa: BLE001 -- one failing cell must not stop the sweep
        log.warning("run %s failed: %s", task, exc)
        result.error = f"{type(exc).__name__}: {exc}"
    return result


_WORKER_STATE = None


def _init_worker(state):
    global _WORKER_STATE
    _WORKER_STATE = state


def _run_in_worker(task):
    return run_task(task, *_WORKER_STATE)


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def prepare(cfg: ExperimentConfig):
    cfg.validate()
    full = load_source(cfg)
    if full.labels is None:
        raise DataError("experiments need labelled data")
    return full, split(full, cfg.split)


def run_sweep(cfg: ExperimentConfig, workers: int | None = None) -> SweepReport:
    full, splits = prepare(cfg)
    lrs = {}
    if cfg.grid_lrs:
        lrs = grid_search(cfg, cfg.grid_lrs, full, splits)
    tasks = _tasks(cfg)
    workers = default_workers() if workers is None else max(1, int(workers))
    state = (cfg, full, splits, lrs)
    if workers == 1 or len(tasks) == 1:
        results = []
        for i, t in enumerate(tasks):
            log.info("[%d/%d] %s rate=%s seed=%s", i + 1, len(tasks), *t)
            results.append(run_task(t, *state))
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(state,)) as pool:
            results = list(pool.map(_run_in_worker, tasks))
    provenance = {
        "config_hash": cfg.config_hash(),
        "config": cfg.to_dict(),
        "seeds": list(cfg.seeds),
        "code_version": __version__,
        "grid_search": {
            "candidates": list(cfg.grid_lrs) if cfg.grid_lrs else None,
            "chosen": lrs or None,
            "rate": _grid_rate(cfg) if cfg.grid_lrs else None,
            "seed": cfg.seeds[0] if cfg.grid_lrs else None,
        },
    }
    return build_report(provenance, results, cfg.missing_rates)


def build_report(provenance, results: list[RunResult], rates) -> SweepReport:
    aggs = []
    for (method, rate), summary in aggregate(results).items():
        row = {"method": method, "missing_rate": rate, "n": summary["macro_f1"].n}
        for metric, s in summary.items():
            row[metric] = None if s.n == 0 else {"mean": s.mean, "std": s.std}
        aggs.append(row)
    report = SweepReport(provenance, list(results), aggs)
    report.relative = relative_rates(report, rates)
    return report


def relative_rates(report: SweepReport, rates) -> list[dict]:
    rows = []
    upper = report.cell("upper_bound", 0.0)
    for rate in rates:
        model = report.cell("classifier_gain", rate)
        for metric in ("macro_f1", "auc_roc"):
            row = {"missing_rate": rate, "metric": metric, "model": None, "best_baseline": None,
                   "best_baseline_method": None, "upper_bound": None, "rir": None, "rgrr": None}
            cands = [(report.cell(m, rate), m) for m in BASELINES]
            cands = [(c[metric]["mean"], m) for c, m in cands if c and c.get(metric)]
            if cands:
                best, best_m = max(cands, key=lambda t: (t[0], -BASELINES.index(t[1])))
                row["best_baseline"], row["best_baseline_method"] = best, best_m
            if model and model.get(metric):
                row["model"] = model[metric]["mean"]
            if upper and upper.get(metric):
                row["upper_bound"] = upper[metric]["mean"]
            if row["model"] is not None and row["best_baseline"]:
                row["rir"] = rir(row["model"], row["best_baseline"])
                if row["upper_bound"] is not None and row["upper_bound"] != row["best_baseline"]:
                    row["rgrr"] = rgrr(row["model"], row["best_baseline"], row["upper_bound"])
            rows.append(row)
    return rows


# -- grid search ----------------------------------------------------------------------


def _grid_rate(cfg):
    rates = list(cfg.missing_rates)
    return rates[len(rates) // 2]


def grid_search(cfg: ExperimentConfig, candidate_lrs, full=None, splits=None) -> dict:
    """Pick one learning rate per method by dev-set macro-F1 (ties go to the smaller rate).

    Searched once per method at the middle missing rate of the sweep and the
    first seed.
    """
    if not candidate_lrs:
        raise ConfigError("grid search needs at least one candidate learning rate")
    if full is None:
        full, splits = prepare(cfg)
    sp = splits[0]
    if sp.dev is None or sp.dev.size == 0:
        raise ConfigError("grid search needs a development split")
    rate, seed = _grid_rate(cfg), cfg.seeds[0]
    masked = apply_mcar(full, rate, feature_indices(cfg, full), seed=mask_seed(seed, rate))
    dev_labels = full.labels[sp.dev]
    chosen = {}
    for method in cfg.methods:
        data = full if method == "upper_bound" else masked
        best_lr, best_score = None, -math.inf
        for lr in sorted(candidate_lrs):
            scores, _ = fit_predict(method, data.subset(sp.train), data.subset(sp.dev).without_labels(), cfg,
                                    model_seed(seed, rate), lr)
            score = macro_f1(dev_labels, scores)
            log.info("grid %s lr=%g dev macro-F1=%.4f", method, lr, score)
            if score > best_score:
                best_lr, best_score = lr, score
        chosen[method] = best_lr
    return chosen


# -- density export ------------------------------------------------------------------------

DENSITY_MIN_BINS = 10


def histogram_bins(values: np.ndarray) -> int:
    """Freedman-Diaconis bin count, never fewer than ``DENSITY_MIN_BINS``."""
    n = values.size
    span = values.max() - values.min()
    q75, q25 = np.percentile(values, [75, 25])
    width = 2.0 * (q75 - q25) / n ** (1.0 / 3.0)
    if width <= 0 or span <= 0:
        return DENSITY_MIN_BINS
    return max(DENSITY_MIN_BINS, int(math.ceil(span / width)))


def density_data(data: MaskedDataset, feature: str, imputations=()) -> dict:
    """Per-class histogram densities of a feature's observed values plus imputation markers.

    ``imputations`` holds ``(method, sample_id, value)`` triples.
    """
    try:
        j = data.feature_index(feature)
    except KeyError:
        raise UsageError(f"unknown feature {feature!r}") from None
    if data.labels is None:
        raise DataError("density export needs labels")
    classes = {}
    for cls in (0, 1):
        vals = data.values[(data.mask[:, j] == 1) & (data.labels == cls), j]
        if vals.size < 2:
            raise DataError(f"feature {feature!r} has fewer than 2 observed values in class {cls}")
        if vals.max() == vals.min():
            edges = np.array([vals.min(), vals.max()])
            masses = np.array([1.0])
        else:
            counts, edges = np.histogram(vals, bins=histogram_bins(vals))
            masses = counts / vals.size
        classes[cls] = {"edges": edges, "masses": masses}
    markers = [(str(m), str(s), float(v)) for m, s, v in imputations]
    return {"feature": feature, "classes": classes, "markers": markers}


def export_density(data: MaskedDataset, feature: str, imputations, path):
    """Write :func:`density_data` as CSV rows ``record,group,sample_id,left,right,mass,density``."""
    dd = density_data(data, feature, imputations)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record", "group", "sample_id", "left", "right", "mass", "density"])
        for cls, hist in dd["classes"].items():
            edges, masses = hist["edges"], hist["masses"]
            for k, mass in enumerate(masses):
                left, right = edges[k], edges[k + 1]
                width = right - left
                dens = mass / width if width > 0 else ""
                w.writerow(["density", f"class_{cls}", "", repr(float(left)), repr(float(right)), repr(float(mass)),
                            dens if dens == "" else repr(float(dens))])
        for method, sample_id, value in dd["markers"]:
            w.writerow(["imputed", method, sample_id, "", "", "", repr(value)])
    return dd


# -- report rendering -----------------------------------------------------------------------


def _pct(s):
    return f"{100 * s['mean']:.1f} ± {100 * s['std']:.1f}"


def _num(s):
    return f"{s['mean']:.4f} ± {s['std']:.4f}"


def render_table(report: SweepReport) -> str:
    prov = report.provenance
    rates = sorted({r.missing_rate for r in report.runs if r.method != "upper_bound"})
    methods = [m for m in METHODS if m != "upper_bound" and any(r.method == m for r in report.runs)]
    failures = report.failures()
    notes = []

    def failed_note(method, rate):
        bad = [r for r in failures if r.method == method and r.missing_rate == rate]
        if not bad:
            return ""
        notes.append(f"{METHOD_LABELS[method]} at {100 * rate:g}% (seed {bad[0].seed}): {bad[0].error}")
        return f"[^{len(notes)}]"

    lines = [f"# Sweep results (config {prov.get('config_hash')}, code {prov.get('code_version')})", ""]
    seeds = prov.get("seeds")
    lines.append(f"Seeds: {', '.join(str(s) for s in seeds) if seeds else 'n/a'}. Cells are mean ± std over seeds.")
    grid = prov.get("grid_search") or {}
    if grid.get("chosen"):
        chosen = ", ".join(f"{m}={lr:g}" for m, lr in sorted(grid["chosen"].items()))
        lines.append(f"Learning rates chosen on the dev split: {chosen}.")
    lines.append("")

    for metric, title, fmt in (("macro_f1", "macro F1-score (%)", _pct), ("auc_roc", "AUC-ROC (%)", _pct),
                               ("imputation_rmse", "imputation RMSE (original units, lower is better)", _num)):
        lines.append(f"## {title}")
        lines.append("")
        lines.append("| Missing rate | " + " | ".join(METHOD_LABELS[m] for m in methods) + " |")
        lines.append("|---" * (len(methods) + 1) + "|")
        upper = report.cell("upper_bound", 0.0)
        if metric != "imputation_rmse" and any(r.method == "upper_bound" for r in report.runs):
            cell = fmt(upper[metric]) if upper and upper.get(metric) else "n/a" + failed_note("upper_bound", 0.0)
            lines.append(f"| 0% | Upper bound: {cell} |" + " |" * (len(methods) - 1))
        for rate in rates:
            cells = {}
            for m in methods:
                a = report.cell(m, rate)
                cells[m] = a[metric] if a and a.get(metric) else None
            present = [v["mean"] for v in cells.values() if v]
            best = (min(present) if metric == "imputation_rmse" else max(present)) if present else None
            row = []
            for m in methods:
                v = cells[m]
                note = failed_note(m, rate) if metric == "macro_f1" else ""
                if v is None:
                    row.append("n/a" + note)
                else:
                    text = fmt(v) + note
                    row.append(f"**{text}**" if v["mean"] == best else text)
            lines.append(f"| {100 * rate:g}% | " + " | ".join(row) + " |")
        lines.append("")

    if report.relative:
        lines.append("## Relative improvement (RIR) and gap reduction (RGRR) vs best baseline (%)")
        lines.append("")
        lines.append("| Missing rate | metric | best baseline | RIR | RGRR |")
        lines.append("|---|---|---|---|---|")
        for r in report.relative:
            best = METHOD_LABELS.get(r["best_baseline_method"], "n/a") if r["best_baseline_method"] else "n/a"
            fmt_rate = (lambda v: "n/a" if v is None else f"{100 * v:.2f}")
            lines.append(f"| {100 * r['missing_rate']:g}% | {r['metric']} | {best} | {fmt_rate(r['rir'])} | "
                         f"{fmt_rate(r['rgrr'])} |")
        lines.append("")
    if notes:
        lines.append("Failed runs:")
        lines.append("")
        lines += [f"[^{i + 1}]: {n}" for i, n in enumerate(notes)]
        lines.append("")
    return "\n".join(lines)


SUMMARY_COLUMNS = ("method", "missing_rate", "n", "macro_f1_mean", "macro_f1_std", "auc_roc_mean", "auc_roc_std",
                   "imputation_rmse_mean", "imputation_rmse_std")


def render_summary_csv(report: SweepReport) -> str:
    lines = [",".join(SUMMARY_COLUMNS)]
    for a in report.aggregates:
        vals = [a["method"], repr(a["missing_rate"]), str(a["n"])]
        for metric in ("macro_f1", "auc_roc", "imputation_rmse"):
            s = a.get(metric)
            vals += [repr(s["mean"]), repr(s["std"])] if s else ["", ""]
        lines.append(",".join(vals))
    lines.append("")
    lines.append("metric,missing_rate,best_baseline_method,best_baseline,model,upper_bound,rir,rgrr")
    for r in report.relative:
        vals = [r["metric"], repr(r["missing_rate"]), r["best_baseline_method"] or ""]
        vals += ["" if r[k] is None else repr(r[k]) for k in ("best_baseline", "model", "upper_bound", "rir", "rgrr")]
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def write_report(report: SweepReport, out_dir) -> list[Path]:
    """Write ``results.json``, ``table.md`` and ``summary.csv`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "results.json", out / "table.md", out / "summary.csv"]
    paths[0].write_text(report.to_json())
    paths[1].write_text(render_table(report))
    paths[2].write_text(render_summary_csv(report))
    return paths
