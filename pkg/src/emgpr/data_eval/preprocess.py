"""Per-task target transforms fitted on training data only."""

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset

__all__ = ["NormalizationRecord", "fit_normalization", "transform", "inverse_transform", "preprocess"]


@dataclass(frozen=True)
class NormalizationRecord:
    """Optional log, then standardization with the population std."""

    mean: float
    std: float
    log_transformed: bool = False

    def forward(self, values):
        v = np.asarray(values, dtype=float)
        if self.log_transformed:
            v = np.log(v)
        return (v - self.mean) / self.std

    def inverse(self, values):
        v = np.asarray(values, dtype=float) * self.std + self.mean
        return np.exp(v) if self.log_transformed else v

    def to_dict(self):
        return {"mean": self.mean, "std": self.std, "log_transformed": self.log_transformed}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["mean"]), float(d["std"]), bool(d.get("log_transformed", False)))


def fit_normalization(values, log_transform=False):
    v = np.asarray(values, dtype=float)
    v = v[~np.isnan(v)]
    if v.size == 0:
        raise ValueError("no observed values to normalize")
    if log_transform:
        if np.any(v <= 0):
            raise ValueError("log transform requires strictly positive targets")
        v = np.log(v)
    std = float(np.std(v))
    if not std > 0:
        raise ValueError("targets have zero variance")
    return NormalizationRecord(float(np.mean(v)), std, bool(log_transform))


def transform(Y, records):
    Y = np.asarray(Y, dtype=float)
    return np.column_stack([r.forward(Y[:, d]) for d, r in enumerate(records)])


def inverse_transform(Y, records):
    Y = np.asarray(Y, dtype=float)
    return np.column_stack([r.inverse(Y[:, d]) for d, r in enumerate(records)])


def preprocess(train: Dataset, test: Dataset = None, log_transform=False):
    """Normalize both sets with statistics from ``train`` alone.

    Returns ``(train_t, test_t, records)``; ``test_t`` is ``None`` when no
    test set is given.
    """
    if log_transform:
        for name, ds in (("train", train), ("test", test)):
            if ds is not None and np.any(ds.Y[~np.isnan(ds.Y)] <= 0):
                raise ValueError(f"log transform requires positive targets ({name} set has values <= 0)")
    records = [fit_normalization(train.Y[:, d], log_transform) for d in range(train.n_tasks)]

    def apply(ds):
        return Dataset(ds.X.copy(), transform(ds.Y, records), list(ds.task_names), list(ds.input_names))

    return apply(train), (apply(test) if test is not None else None), records
