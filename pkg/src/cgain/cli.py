"""Command line entry point: ``cgain <subcommand> ...``.

Exit codes: 0 success, 2 configuration or usage error, 3 data error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .baselines import ChainedImputer, SimpleImputer
from .classifier_gain import CG_HISTORY_COLUMNS, load_triple, predict, save_triple, train_classifier_gain
from .config import ExperimentConfig, load_config
from .data import (
    SyntheticSpec,
    apply_mcar,
    fit_scaler,
    generate_synthetic,
    load_csv,
    load_dataset,
    missing_report,
    save_dataset,
    scale,
    unscale_values,
)
from .errors import CgainError, ConfigError, DataError, UsageError
from .gain import GAIN_HISTORY_COLUMNS, impute_full, train_gain, write_history
from .harness import SweepReport, export_density, run_sweep, write_report

log = logging.getLogger("cgain")

IMPUTE_METHODS = ("simple", "mice", "gain", "classifier_gain")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _csv_names(text):
    return [s.strip() for s in text.split(",") if s.strip()] if text else None


def _load_data(args):
    """Dataset from ``--data``: a saved prefix, or a raw CSV when the path ends in .csv."""
    path = args.data
    if path.endswith(".csv"):
        return load_csv(path, na_token=args.na_token, label_column=args.label_column)
    data, _ = load_dataset(path)
    return data


def _config(args) -> ExperimentConfig:
    return load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()


def cmd_generate_data(args):
    spec = SyntheticSpec(args.n_samples, args.n_features, args.class1_fraction, args.shift, args.correlation,
                         args.label_noise)
    spec.validate()
    data = generate_synthetic(spec, args.seed)
    save_dataset(data, args.out)
    print(f"wrote {data.n_samples} rows x {data.n_features} features to {args.out}.*")


def cmd_mask(args):
    data = _load_data(args)
    subset = None
    if args.features:
        try:
            subset = [data.feature_index(n) for n in _csv_names(args.features)]
        except KeyError as exc:
            raise UsageError(f"unknown feature {exc}") from None
    masked = apply_mcar(data, args.rate, subset, seed=args.seed)
    save_dataset(masked, args.out)
    print(missing_report(masked).format())


def cmd_impute(args):
    data = _load_data(args)
    cfg = _config(args)
    scaler = fit_scaler(data)
    scaled = scale(data, scaler)
    hp = cfg.method_hyper(args.method)
    if args.method == "simple":
        filled = SimpleImputer().fit(scaled).transform(scaled)
    elif args.method == "mice":
        filled = ChainedImputer(cfg.mice).fit(scaled, args.seed).fitted_
    elif args.method == "gain":
        model = train_gain(scaled, hp["gain"], args.seed)
        if args.history:
            write_history(model.history, args.history, GAIN_HISTORY_COLUMNS)
        filled = impute_full(model.G, scaled, args.seed, args.n_draws)
    else:
        triple = train_classifier_gain(scaled, hp["classifier_gain"], args.seed, scaler)
        if args.history:
            write_history(triple.history, args.history, CG_HISTORY_COLUMNS)
        filled, _ = predict(triple, scaled.without_labels(), args.seed, args.n_draws)
    values = unscale_values(filled, scaler)
    values[data.mask == 1] = data.values[data.mask == 1]
    completed = replace(data, values=values, mask=np.ones_like(data.mask))
    save_dataset(completed, args.out)
    print(f"imputed {int((data.mask == 0).sum())} cells with {args.method}; wrote {args.out}.*")


def cmd_train(args):
    data = _load_data(args)
    if data.labels is None:
        raise DataError("training needs a labelled dataset")
    cfg = _config(args)
    hyper = cfg.method_hyper("classifier_gain", args.lr)["classifier_gain"]
    if args.epochs is not None:
        hyper = replace(hyper, epochs=args.epochs)
    scaler = fit_scaler(data)
    triple = train_classifier_gain(scale(data, scaler), hyper, args.seed, scaler)
    triple.config_hash = cfg.config_hash()
    save_triple(triple, args.out)
    if args.history:
        write_history(triple.history, args.history, CG_HISTORY_COLUMNS)
    last = triple.history[-1] if triple.history else {}
    print(f"trained {len(triple.history)} epochs; final losses "
          + ", ".join(f"{k}={v:.4f}" for k, v in last.items() if k != "epoch"))


def cmd_predict(args):
    triple = load_triple(args.model)
    data = _load_data(args)
    if triple.scaler is None:
        raise DataError(f"{args.model} carries no scaler")
    if data.feature_kinds != triple.scaler.kinds:
        raise DataError("dataset features do not match the model")
    x_hat, scores = predict(triple, scale(data.without_labels(), triple.scaler), args.seed, args.n_draws)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "score", "predicted"])
        for i, s in enumerate(scores):
            w.writerow([i, repr(float(s)), int(s >= 0.5)])
    if args.imputed_out:
        values = unscale_values(x_hat, triple.scaler)
        values[data.mask == 1] = data.values[data.mask == 1]
        save_dataset(replace(data, values=values, mask=np.ones_like(data.mask)), args.imputed_out)
    print(f"wrote {len(scores)} predictions to {args.out}")


def cmd_sweep(args):
    cfg = load_config(args.config)
    report = run_sweep(cfg, args.workers)
    paths = write_report(report, args.out)
    failed = report.failures()
    print(f"{len(report.runs)} runs ({len(failed)} failed); wrote " + ", ".join(str(p) for p in paths))


def cmd_report(args):
    report = SweepReport.load(args.results)
    paths = write_report(report, args.out)
    print("wrote " + ", ".join(str(p) for p in paths))


def _read_imputations(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"method", "sample_id", "value"} - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append((row["method"], row["sample_id"], float(row["value"])))
            except ValueError:
                raise DataError(f"{path}:{lineno}: value {row['value']!r} is not a number") from None
    return rows


def cmd_export_density(args):
    data = _load_data(args)
    imputations = _read_imputations(args.imputations) if args.imputations else []
    export_density(data, args.feature, imputations, args.out)
    print(f"wrote density data for {args.feature!r} to {args.out}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cgain", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"cgain {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_args(sp):
        sp.add_argument("--data", required=True, help="dataset prefix, or a raw .csv file")
        sp.add_argument("--na-token", default="NA")
        sp.add_argument("--label-column", default="label")

    g = sub.add_parser("generate-data", help="write a synthetic labelled dataset")
    g.add_argument("--out", required=True, help="output prefix")
    g.add_argument("--n-samples", type=int, default=2000)
    g.add_argument("--n-features", type=int, default=10)
    g.add_argument("--class1-fraction", type=float, default=0.5)
    g.add_argument("--shift", type=float, default=2.0, help="class mean shift in noise standard deviations")
    g.add_argument("--correlation", type=float, default=0.5, help="share of variance from the common factor")
    g.add_argument("--label-noise", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_generate_data)

    m = sub.add_parser("mask", help="hide entries completely at random")
    data_args(m)
    m.add_argument("--rate", type=float, required=True)
    m.add_argument("--features", help="comma-separated feature names to mask (default: all)")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_mask)

    i = sub.add_parser("impute", help="fill missing entries with one method")
    data_args(i)
    i.add_argument("--method", choices=IMPUTE_METHODS, default="gain")
    i.add_argument("--config", help="INI config supplying hyperparameters")
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--n-draws", type=int, default=1)
    i.add_argument("--history", help="write per-epoch losses to this CSV")
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_impute)

    t = sub.add_parser("train", help="jointly train generator, classifier and discriminator")
    data_args(t)
    t.add_argument("--config")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--lr", type=float, help="override every learning rate")
    t.add_argument("--epochs", type=int)
    t.add_argument("--history")
    t.add_argument("--out", required=True, help="model file (.npz)")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="impute and classify with a trained model")
    pr.add_argument("--model", required=True)
    data_args(pr)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--n-draws", type=int, default=1)
    pr.add_argument("--out", required=True, help="predictions CSV")
    pr.add_argument("--imputed-out", help="also write the completed dataset to this prefix")
    pr.set_defaults(func=cmd_predict)

    s = sub.add_parser("sweep", help="run a missing-rate sweep from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--workers", type=int, help="parallel runs (default: $CGAIN_WORKERS or 1)")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="re-render tables from a results file")
    r.add_argument("--results", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)

    e = sub.add_parser("export-density", help="per-class histogram data plus imputed-value markers")
    data_args(e)
    e.add_argument("--feature", required=True)
    e.add_argument("--imputations", help="CSV with method,sample_id,value columns")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_export_density)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except CgainError as exc:
        print(f"cgain: error: {exc}", file=sys.stderr)
        return exc.exit_code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except CgainError as exc:
        print(f"cgain: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"cgain: error: {exc}", file=sys.stderr)
        return ConfigError.exit_code if getattr(args, "config", None) == exc.filename else DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
