"""Command-line entry point: ``emgpr {fit,eval,experiment,sweep,synth}``.

Exit status is 0 on success, 2 for invalid arguments or configuration and
1 for data or numerical failures.
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .ensemble import EnsembleConfig, EnsembleModel, fit_ensemble
from .exceptions import ConfigError, EmgprError
from .model import EmgprModel, ModelConfig, fit, fit_icm, fit_no_transfer
from .gp_single import FitConfig
from .data_eval.dataset import Dataset
from .data_eval.experiment import ExperimentConfig, run_experiment, run_sweep
from .data_eval.jura import DEFAULT_TARGETS, find_jura_files, load_table
from .data_eval.metrics import evaluate
from .data_eval.preprocess import NormalizationRecord, fit_normalization, inverse_transform, transform
from .data_eval.report import sweep_csv
from .data_eval.synthetic import SyntheticConfig, generate_synthetic

log = logging.getLogger("emgpr")

MODEL_CHOICES = ("gp", "icm", "emgpr", "emgpr-ensemble")


def _csv_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def _int_list(text):
    try:
        return [int(t) for t in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _model_kind(args):
    kind = args.model
    if args.ensemble:
        if kind not in ("emgpr", "emgpr-ensemble"):
            raise ConfigError("ensemble", f"--ensemble only applies to emgpr, not {kind}")
        kind = "emgpr-ensemble"
    return kind


def _common(p):
    p.add_argument("--model", choices=MODEL_CHOICES, default="emgpr")
    p.add_argument("--ensemble", action="store_true", help="mini-batch ensemble of step-2 weights")
    p.add_argument("--batch-size", type=int, default=None, metavar="N0", help="mini-batch size (default D^2)")
    p.add_argument("--strict-partition", action="store_true", help="drop rows left over by the partition")
    p.add_argument("--rank", type=int, default=2, metavar="R1", help="ICM coregionalization rank")
    p.add_argument("--targets", type=_csv_list, default=list(DEFAULT_TARGETS), help="e.g. Cd,Ni,Zn")
    p.add_argument("--log-transform", action="store_true", help="log targets before standardizing")
    p.add_argument("--max-iterations", type=int, default=120)
    p.add_argument("--jobs", type=int, default=1, help="parallel workers for independent fits")
    p.add_argument("--seed", type=int, default=0)


def _build_parser():
    parser = argparse.ArgumentParser(prog="emgpr", description="Multi-task GP regression toolkit")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit one model on a training table and save it as JSON")
    _common(p)
    p.add_argument("--data", required=True, help="training CSV/GSLIB file, or a Jura directory")
    p.add_argument("--out", required=True, help="model JSON path")

    p = sub.add_parser("eval", help="score a saved model on a test table")
    p.add_argument("--model-file", required=True)
    p.add_argument("--data", required=True, help="test CSV/GSLIB file, or a Jura directory")
    p.add_argument("--out", help="metrics JSON path (default: stdout)")

    p = sub.add_parser("experiment", help="run a restart protocol and write a report")
    _common(p)
    _experiment_args(p)
    p.add_argument("--out", help="report JSON path")
    p.add_argument("--timing-out", help="write wall-clock timings to this JSON path")

    p = sub.add_parser("sweep", help="ensemble MAE over mini-batch sizes, as CSV")
    _common(p)
    _experiment_args(p)
    p.add_argument("--batch-sizes", type=_int_list, default=[9, 18, 27, 36, 45, 54])
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = sub.add_parser("synth", help="draw a synthetic dataset to CSV")
    p.add_argument("--config", help="synthetic-dataset JSON config")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--out", required=True, help="CSV path")
    return parser


def _experiment_args(p):
    p.add_argument("--dataset", choices=("jura", "synthetic"), default="jura")
    p.add_argument("--data", help="Jura directory (or train,test file pair)")
    p.add_argument("--synth-config", help="synthetic-dataset JSON config")
    p.add_argument("--score", type=_csv_list, default=None,
                   help="targets to score; the others are observed at the test sites as side information")
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--folds", type=int, default=1)
    p.add_argument("--test-fraction", type=float, default=0.2)


def _load_table_arg(path, targets, which):
    """A table from a file, or the train/test member of a Jura directory."""
    p = Path(path)
    if p.is_dir():
        p = find_jura_files(p)[0 if which == "train" else 1]
    return load_table(p, targets)


def _experiment_config(args):
    data_path = args.data
    if data_path and "," in data_path:
        data_path = _csv_list(data_path)
    synthetic = None
    if getattr(args, "synth_config", None):
        synthetic = json.loads(Path(args.synth_config).read_text())
    targets = args.targets
    if args.dataset == "synthetic" and targets == list(DEFAULT_TARGETS):
        targets = [f"task{d}" for d in range((synthetic or {}).get("n_tasks", SyntheticConfig.n_tasks))]
    return ExperimentConfig(
        model=_model_kind(args), dataset=args.dataset, data_path=data_path, targets=targets,
        score=args.score, log_transform=args.log_transform, restarts=args.restarts, folds=args.folds,
        test_fraction=args.test_fraction, seed=args.seed, batch_size=args.batch_size, rank=args.rank,
        strict_partition=args.strict_partition, max_iterations=args.max_iterations, n_jobs=args.jobs,
        synthetic=synthetic,
    ).validate()


def _write(text, out):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_fit(args):
    kind = _model_kind(args)
    ds = _load_table_arg(args.data, args.targets, "train")
    records = [fit_normalization(ds.Y[:, d], args.log_transform) for d in range(ds.n_tasks)]
    Y = transform(ds.Y, records)
    mconf = ModelConfig(n_jobs=args.jobs, fit=FitConfig(max_iterations=args.max_iterations))
    if kind == "gp":
        model = fit_no_transfer(ds.X, Y, mconf)
    elif kind == "emgpr":
        model = fit(ds.X, Y, mconf)
    elif kind == "icm":
        model = fit_icm(ds.X, Y, args.rank, mconf)
    else:
        econf = EnsembleConfig(batch_size=args.batch_size,
                               leftover_policy="drop" if args.strict_partition else "append",
                               n_jobs=args.jobs, model=mconf)
        model = fit_ensemble(ds.X, Y, econf)
    doc = {
        "model": model.to_dict(),
        "task_names": ds.task_names,
        "input_names": ds.input_names,
        "normalization": [r.to_dict() for r in records],
    }
    Path(args.out).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")
    log.info("saved %s model for tasks %s to %s", kind, ds.task_names, args.out)
    return 0


def cmd_eval(args):
    doc = json.loads(Path(args.model_file).read_text())
    m = doc["model"]
    model = EnsembleModel.from_dict(m) if m["kind"] == "emgpr-ensemble" else EmgprModel.from_dict(m)
    records = [NormalizationRecord.from_dict(r) for r in doc["normalization"]]
    ds = _load_table_arg(args.data, doc["task_names"], "test")
    mean = model.predict(ds.X, return_variance=False).mean
    metrics = evaluate(inverse_transform(mean, records), ds.Y, None, doc["task_names"])
    _write(json.dumps(metrics, indent=2, sort_keys=True) + "\n", args.out)
    return 0


def cmd_experiment(args):
    config = _experiment_config(args)
    report = run_experiment(config)
    if args.out:
        report.write(args.out)
    if args.timing_out:
        Path(args.timing_out).write_text(
            json.dumps({"seconds": report.timing, "normalized_to_gp": report.normalized_time()},
                       indent=2, sort_keys=True) + "\n", encoding="utf-8")
    sys.stdout.write(report.text_table())
    return 0


def cmd_sweep(args):
    config = _experiment_config(args)
    rows, _ = run_sweep(config, args.batch_sizes)
    _write(sweep_csv(rows), args.out)
    return 0


def cmd_synth(args):
    cfg = SyntheticConfig.from_json(args.config) if args.config else SyntheticConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    ds, _ = generate_synthetic(cfg)
    _write_dataset(ds, args.out)
    return 0


def _write_dataset(ds: Dataset, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ds.input_names + ds.task_names)
        for x, y in zip(ds.X, ds.Y):
            w.writerow([repr(float(v)) for v in np.concatenate([x, y])])


COMMANDS = {"fit": cmd_fit, "eval": cmd_eval, "experiment": cmd_experiment, "sweep": cmd_sweep,
            "synth": cmd_synth}


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"emgpr: configuration error: {exc}", file=sys.stderr)
        return 2
    except (EmgprError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"emgpr: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
