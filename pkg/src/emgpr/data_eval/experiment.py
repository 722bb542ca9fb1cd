"""Experiment protocols: restarts, splits, model fitting and scoring.

Two data sources are supported. ``jura`` uses the official 259/100 split;
when ``score`` names a subset of the targets, the remaining targets act as
side information observed at the validation sites too (the scored tasks
are hidden there). ``synthetic`` draws one dataset from a latent mixture
and evaluates on a hold-out split or K folds.

Every restart perturbs the step-1 initialization multiplicatively with a
log-normal draw seeded by ``(seed, restart)``; weights always start at
Kronecker deltas. Results are deterministic given the seed.
"""

import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional

import numpy as np

from ..ensemble import EnsembleConfig, fit_ensemble
from ..exceptions import ConfigError
from ..gp_single import FitConfig, LatentProcessParams
from ..model import EmgprModel, ModelConfig, fit_icm, fit_step1, fit_step2
from ..structured_cov import WeightSet
from .dataset import Dataset
from .jura import DEFAULT_TARGETS, load_jura
from .metrics import evaluate
from .preprocess import fit_normalization, inverse_transform, transform
from .report import ExperimentReport, aggregate
from .synthetic import SyntheticConfig, generate_synthetic

log = logging.getLogger(__name__)

__all__ = ["ExperimentConfig", "Split", "run_experiment", "run_sweep", "prepare_splits"]

MODELS = ("gp", "icm", "emgpr", "emgpr-ensemble")
DATASETS = ("jura", "synthetic")
INIT_PERTURBATION_SD = 0.25


@dataclass
class ExperimentConfig:
    model: str = "emgpr"
    dataset: str = "jura"
    data_path: Optional[str] = None
    targets: List[str] = field(default_factory=lambda: list(DEFAULT_TARGETS))
    score: Optional[List[str]] = None
    log_transform: bool = True
    restarts: int = 10
    folds: int = 1
    test_fraction: float = 0.2
    seed: int = 0
    batch_size: Optional[int] = None
    rank: int = 2
    strict_partition: bool = False
    perturb_init: bool = True
    init_lengthscale: float = 1.0
    init_noise_var: float = 0.02
    max_iterations: int = 120
    baseline: bool = True
    n_jobs: int = 1
    synthetic: Optional[dict] = None

    def validate(self):
        if self.model not in MODELS:
            raise ConfigError("model", f"must be one of {MODELS}, got {self.model!r}")
        if self.dataset not in DATASETS:
            raise ConfigError("dataset", f"must be one of {DATASETS}, got {self.dataset!r}")
        if self.dataset == "jura" and not self.data_path:
            raise ConfigError("data_path", "required for the jura dataset")
        if not self.targets:
            raise ConfigError("targets", "at least one target is required")
        if self.score is not None:
            unknown = [s for s in self.score if s not in self.targets]
            if unknown or not self.score:
                raise ConfigError("score", f"must be a non-empty subset of targets {self.targets}")
            if self.dataset != "jura" and len(self.score) != len(self.targets):
                raise ConfigError("score", "side-information scoring is only defined for the jura split")
        if self.restarts < 1:
            raise ConfigError("restarts", "must be at least 1")
        if self.folds < 1:
            raise ConfigError("folds", "must be at least 1")
        if self.dataset == "jura" and self.folds != 1:
            raise ConfigError("folds", "the jura protocol uses its fixed train/validation split")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction", "must lie in (0, 1)")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size", "must be at least 1")
        if self.rank < 1 or (self.model == "icm" and self.rank > len(self.targets)):
            raise ConfigError("rank", f"must lie in [1, {len(self.targets)}]")
        if self.max_iterations < 0:
            raise ConfigError("max_iterations", "must be non-negative")
        if self.init_lengthscale <= 0:
            raise ConfigError("init_lengthscale", "must be positive")
        if self.init_noise_var <= 0:
            raise ConfigError("init_noise_var", "must be positive")
        if self.n_jobs < 1:
            raise ConfigError("n_jobs", "must be at least 1")
        if self.synthetic is not None:
            known = {f.name for f in fields(SyntheticConfig)}
            bad = sorted(set(self.synthetic) - known)
            if bad:
                raise ConfigError("synthetic", f"unknown field(s) {bad}")
        return self

    def to_dict(self):
        return asdict(self)

    def echo(self):
        """Settings that determine the results (the worker count does not)."""
        d = self.to_dict()
        d.pop("n_jobs")
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        bad = sorted(set(d) - known)
        if bad:
            raise ConfigError(bad[0], "unknown configuration field")
        return cls(**d)

    def model_config(self):
        return ModelConfig(
            init_lengthscale=self.init_lengthscale,
            init_noise_var=self.init_noise_var,
            n_jobs=self.n_jobs,
            fit=FitConfig(max_iterations=self.max_iterations),
        )


@dataclass
class Split:
    """Raw-space training design and test truth for one evaluation split."""

    X_train: np.ndarray
    Y_train: np.ndarray
    X_test: np.ndarray
    Y_test: np.ndarray
    test_rows: Optional[np.ndarray] = None


def _jura_split(train: Dataset, test: Dataset, score):
    if score is None or len(score) == train.n_tasks:
        return Split(train.X, train.Y, test.X, test.Y)
    scored = np.array([t in score for t in train.task_names])
    hidden = test.Y.copy()
    hidden[:, scored] = np.nan
    truth = test.Y.copy()
    truth[:, ~scored] = np.nan
    return Split(np.vstack([train.X, test.X]), np.vstack([train.Y, hidden]), test.X, truth)


def _fold_splits(ds: Dataset, folds, test_fraction, seed):
    rng = np.random.default_rng([seed, 7919])
    perm = rng.permutation(ds.n)
    if folds == 1:
        n_test = max(1, int(round(test_fraction * ds.n)))
        parts = [perm[:n_test]]
    else:
        parts = np.array_split(perm, folds)
    splits = []
    for test_rows in parts:
        mask = np.ones(ds.n, dtype=bool)
        mask[test_rows] = False
        test_rows = np.sort(test_rows)
        splits.append(Split(ds.X[mask], ds.Y[mask], ds.X[test_rows], ds.Y[test_rows], test_rows))
    return splits


def prepare_splits(config: ExperimentConfig, data=None):
    """``(task_names, splits)`` for the configured data source.

    ``data`` overrides loading: a ``(train, test)`` pair of datasets for the
    jura protocol or a single :class:`Dataset` for the fold protocol.
    """
    if config.dataset == "jura":
        train, test = data if data is not None else load_jura(config.data_path, config.targets)
        train, test = train.select(config.targets), test.select(config.targets)
        return list(config.targets), [_jura_split(train, test, config.score)]
    if data is None:
        data, _ = generate_synthetic(SyntheticConfig(**(config.synthetic or {})))
    names = config.targets if len(config.targets) == data.n_tasks and set(config.targets) <= set(data.task_names) \
        else data.task_names
    data = data.select(names)
    return list(names), _fold_splits(data, config.folds, config.test_fraction, config.seed)


def _restart_inits(config, D, P, restart):
    base = LatentProcessParams.default(P, False, config.init_lengthscale, config.init_noise_var)
    if not config.perturb_init:
        return [base] * D
    rng = np.random.default_rng([config.seed, restart])
    factors = np.exp(rng.normal(0.0, INIT_PERTURBATION_SD, size=(D, 2)))
    return [
        LatentProcessParams(base.kernel.with_lengthscales(np.array(base.kernel.lengthscales) * f[0]),
                            base.noise_std * f[1])
        for f in factors
    ]


def _fit_predict(name, split_n, inits, config, mconf, step1_cache):
    """Fit one model kind on a normalized split; returns (test means, timing)."""
    X, Y, Xs = split_n
    D = Y.shape[1]
    timing = {}
    if name in ("gp", "emgpr", "emgpr-ensemble"):
        if "params" not in step1_cache:
            t0 = time.perf_counter()
            step1_cache["params"] = fit_step1(X, Y, inits, mconf)
            step1_cache["time"] = time.perf_counter() - t0
        params = step1_cache["params"]
        timing["step1"] = step1_cache["time"]
    t0 = time.perf_counter()
    if name == "gp":
        model = EmgprModel("gp", [p.kernel for p in params], WeightSet.delta(D),
                           [p.noise_var for p in params], X, Y, task_params=params)
        timing["step2"] = 0.0
    elif name == "emgpr":
        weights = fit_step2(X, Y, params, None, mconf)
        timing["step2"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        model = EmgprModel("emgpr", [p.kernel for p in params], weights,
                           [p.noise_var for p in params], X, Y, task_params=params)
    elif name == "emgpr-ensemble":
        econf = EnsembleConfig(batch_size=config.batch_size,
                               leftover_policy="drop" if config.strict_partition else "append",
                               n_jobs=config.n_jobs, model=mconf)
        model = fit_ensemble(X, Y, econf, step1_params=params)
        timing["step2"] = model.timings["step2"]
        t0 = time.perf_counter()
    else:
        model = fit_icm(X, Y, config.rank, mconf, init=inits[0])
    timing["condition"] = time.perf_counter() - t0
    timing["fit"] = timing.get("step1", 0.0) + timing.get("step2", 0.0) + timing["condition"]
    mean = model.predict(Xs, return_variance=False).mean
    return mean, timing


def _run_restart(r, task_names, splits, models, config):
    mconf = config.model_config()
    P = splits[0].X_train.shape[1]
    inits = _restart_inits(config, len(task_names), P, r)
    preds = {m: [] for m in models}
    timing = {m: {} for m in models}
    truths, records_all = [], []
    for split in splits:
        records = [fit_normalization(split.Y_train[:, d], config.log_transform) for d in range(len(task_names))]
        records_all.append(records)
        Yn = transform(split.Y_train, records)
        cache = {}
        for m in models:
            mean, t = _fit_predict(m, (split.X_train, Yn, split.X_test), inits, config, mconf, cache)
            preds[m].append(inverse_transform(mean, records))
            for k, v in t.items():
                timing[m][k] = timing[m].get(k, 0.0) + v
        truths.append(split.Y_test)
    truth = np.vstack(truths)
    results = {}
    for m in models:
        metrics = evaluate(np.vstack(preds[m]), truth, None, task_names)
        results[m] = {"restart": r, **metrics}
    return results, timing, records_all


def run_experiment(config: ExperimentConfig, data=None) -> ExperimentReport:
    """Run every restart of the configured protocol and collect a report."""
    config.validate()
    task_names, splits = prepare_splits(config, data)
    models = [config.model]
    if config.baseline and config.model != "gp":
        models = ["gp"] + models
    runs = {m: [] for m in models}
    timing = {m: [] for m in models}
    records = []
    for r in range(config.restarts):
        results, t, records = _run_restart(r, task_names, splits, models, config)
        log.info("restart %d: %s", r, {m: round(results[m]["overall"]["MAE"], 5) for m in models})
        for m in models:
            runs[m].append(results[m])
            timing[m].append(t[m])
    normalization = [[dict(task=n, **rec.to_dict()) for n, rec in zip(task_names, recs)] for recs in records]
    return ExperimentReport(config.echo(), runs, normalization, timing)


def run_sweep(config: ExperimentConfig, batch_sizes, data=None):
    """Ensemble MAE for each mini-batch size, sharing step 1 per restart.

    Returns ``(rows, reports)``: CSV-ready rows ``{N0, task, MAE_mean,
    MAE_sd}`` (task ``overall`` included) and the per-N0 restart results.
    """
    config.validate()
    task_names, splits = prepare_splits(config, data)
    per_n0 = {int(n0): [] for n0 in batch_sizes}
    for r in range(config.restarts):
        mconf = config.model_config()
        inits = _restart_inits(config, len(task_names), splits[0].X_train.shape[1], r)
        split_caches = [{} for _ in splits]
        for n0 in per_n0:
            sweep_conf = ExperimentConfig(**{**config.to_dict(), "batch_size": n0, "model": "emgpr-ensemble"})
            preds, truths = [], []
            for split, cache in zip(splits, split_caches):
                records = [fit_normalization(split.Y_train[:, d], config.log_transform)
                           for d in range(len(task_names))]
                Yn = transform(split.Y_train, records)
                mean, _ = _fit_predict("emgpr-ensemble", (split.X_train, Yn, split.X_test), inits,
                                       sweep_conf, mconf, cache)
                preds.append(inverse_transform(mean, records))
                truths.append(split.Y_test)
            metrics = evaluate(np.vstack(preds), np.vstack(truths), None, task_names)
            per_n0[n0].append({"restart": r, **metrics})
    rows = []
    for n0, runs in per_n0.items():
        agg = aggregate(runs)
        for t in task_names:
            if t in agg["per_task"]:
                m = agg["per_task"][t]["MAE"]
                rows.append({"N0": n0, "task": t, "MAE_mean": m["mean"], "MAE_sd": m["sd"]})
        m = agg["overall"]["MAE"]
        rows.append({"N0": n0, "task": "overall", "MAE_mean": m["mean"], "MAE_sd": m["sd"]})
    return rows, per_n0
