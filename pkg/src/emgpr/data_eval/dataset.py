from dataclasses import dataclass, field
from typing import List

import numpy as np

__all__ = ["Dataset"]


@dataclass
class Dataset:
    """Inputs ``X`` (N x P) and raw targets ``Y`` (N x D).

    ``NaN`` in ``Y`` marks an unobserved (point, task) pair; infinities
    are rejected.
    """

    X: np.ndarray
    Y: np.ndarray
    task_names: List[str] = field(default_factory=list)
    input_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        if self.Y.ndim == 1:
            self.Y = self.Y[:, None]
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValueError(f"{self.X.shape[0]} input rows but {self.Y.shape[0]} target rows")
        if self.X.shape[0] < 2:
            raise ValueError("a dataset needs at least two rows")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("inputs contain non-finite values")
        if np.any(np.isinf(self.Y)):
            raise ValueError("targets contain infinite values")
        if not self.task_names:
            self.task_names = [f"task{d}" for d in range(self.Y.shape[1])]
        if not self.input_names:
            self.input_names = [f"x{p}" for p in range(self.X.shape[1])]
        if len(self.task_names) != self.Y.shape[1]:
            raise ValueError("task_names length does not match target columns")
        if len(self.input_names) != self.X.shape[1]:
            raise ValueError("input_names length does not match input columns")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def n_tasks(self):
        return self.Y.shape[1]

    def select(self, names):
        """Project onto a subset of tasks, in the given order."""
        missing = [n for n in names if n not in self.task_names]
        if missing:
            raise KeyError(f"unknown task(s) {missing}; available: {self.task_names}")
        cols = [self.task_names.index(n) for n in names]
        return Dataset(self.X.copy(), self.Y[:, cols].copy(), list(names), list(self.input_names))

    def subset(self, rows):
        rows = np.asarray(rows)
        return Dataset(self.X[rows].copy(), self.Y[rows].copy(), list(self.task_names), list(self.input_names))
