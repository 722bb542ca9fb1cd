"""Datasets, preprocessing, metrics, experiment protocols and reports."""

from .dataset import Dataset
from .experiment import ExperimentConfig, run_experiment, run_sweep
from .jura import DEFAULT_TARGETS, load_jura, load_table
from .metrics import evaluate
from .preprocess import NormalizationRecord, fit_normalization, inverse_transform, preprocess, transform
from .report import SCHEMA_VERSION, ExperimentReport, aggregate, sweep_csv
from .synthetic import SyntheticConfig, generate_synthetic
