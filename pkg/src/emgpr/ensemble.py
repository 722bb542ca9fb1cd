"""Strided mini-batch ensembles of step-2 weight sets.

Training rows are split into ``L = N // N0`` strided batches; batch ``k``
(0-based) holds rows ``k, L + k, 2L + k, ..., (N0 - 1)L + k``. Step 1 runs
once on all data, then one weight set is learned per batch, and the
members' predictions are averaged.
"""

import logging
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .exceptions import TaskFitError
from .gp_single import LatentProcessParams
from .model import (
    EmgprModel,
    ModelConfig,
    MultiTaskPrediction,
    _map,
    _prepare,
    _raise_failures,
    fit_step1,
    fit_step2,
)
from .structured_cov import WeightSet

log = logging.getLogger(__name__)

__all__ = ["PartitionPlan", "partition", "EnsembleConfig", "EnsembleModel", "fit_ensemble", "predict_ensemble"]

LEFTOVER_POLICIES = ("append", "drop")
MEMBER_DATA = ("full", "batch")


@dataclass(frozen=True)
class PartitionPlan:
    n: int
    batch_size: int
    batches: List[np.ndarray]
    leftovers: np.ndarray

    @property
    def n_batches(self):
        return len(self.batches)

    def member_indices(self, leftover_policy="append"):
        """Training rows of each member.

        ``append`` adds leftover row ``i`` to batch ``i mod L``; ``drop``
        discards leftovers as the bare index formula does.
        """
        if leftover_policy not in LEFTOVER_POLICIES:
            raise ValueError(f"leftover_policy must be one of {LEFTOVER_POLICIES}")
        if leftover_policy == "drop" or self.leftovers.size == 0:
            return [b.copy() for b in self.batches]
        L = self.n_batches
        extra = [self.leftovers[self.leftovers % L == k] for k in range(L)]
        return [np.sort(np.concatenate([b, e])) for b, e in zip(self.batches, extra)]


def partition(n: int, batch_size: int) -> PartitionPlan:
    """Strided partition of ``range(n)`` into batches of exactly ``batch_size``."""
    n, batch_size = int(n), int(batch_size)
    if batch_size < 1:
        raise ValueError(f"batch size must be at least 1, got {batch_size}")
    if batch_size > n:
        raise ValueError(f"batch size {batch_size} exceeds sample count {n}")
    L = n // batch_size
    # column k of the (N0, L) grid is batch k: k, L + k, 2L + k, ...
    batches = list(np.arange(batch_size * L).reshape(batch_size, L).T)
    leftovers = np.arange(batch_size * L, n)
    return PartitionPlan(n, batch_size, batches, leftovers)


@dataclass
class EnsembleConfig:
    batch_size: Optional[int] = None
    leftover_policy: str = "append"
    member_data: str = "full"
    n_jobs: int = 1
    model: ModelConfig = field(default_factory=ModelConfig)

    def resolved_batch_size(self, D):
        return self.batch_size if self.batch_size is not None else D * D


@dataclass
class EnsembleModel:
    """Shared step-1 parameters plus one weight set per mini-batch.

    Members are conditioned on demand (``member(k)``) rather than stored, so
    only one member's factorized covariance is alive at a time.
    """

    task_params: list
    weights: List[WeightSet]
    member_rows: List[np.ndarray]
    X: np.ndarray
    Y: np.ndarray
    member_data: str = "full"
    jitter: float = 1e-10
    timings: dict = field(default_factory=dict)

    @property
    def n_members(self):
        return len(self.weights)

    def member(self, k) -> EmgprModel:
        idx = self.member_rows[k]
        X, Y = (self.X, self.Y) if self.member_data == "full" else (self.X[idx], self.Y[idx])
        try:
            return EmgprModel("emgpr", [p.kernel for p in self.task_params], self.weights[k],
                              [p.noise_var for p in self.task_params], X, Y,
                              task_params=list(self.task_params), jitter=self.jitter)
        except Exception as exc:
            raise TaskFitError(k, exc, kind="member") from exc

    @property
    def members(self):
        return [self.member(k) for k in range(self.n_members)]

    def predict(self, Xstar, include_noise=False, return_variance=True):
        return predict_ensemble(self, Xstar, include_noise=include_noise, return_variance=return_variance)

    def to_dict(self):
        return {
            "kind": "emgpr-ensemble",
            "task_params": [p.to_dict() for p in self.task_params],
            "weights": [w.to_list() for w in self.weights],
            "member_rows": [r.tolist() for r in self.member_rows],
            "member_data": self.member_data,
            "X": self.X.tolist(),
            "Y": [[None if np.isnan(v) else v for v in row] for row in self.Y.tolist()],
        }

    @classmethod
    def from_dict(cls, d):
        Y = np.array([[np.nan if v is None else v for v in row] for row in d["Y"]], dtype=float)
        return cls(
            [LatentProcessParams.from_dict(p) for p in d["task_params"]],
            [WeightSet(np.array(w)) for w in d["weights"]],
            [np.array(r, dtype=int) for r in d["member_rows"]],
            np.array(d["X"], dtype=float), Y, d.get("member_data", "full"),
        )


def fit_ensemble(X, Y, config: EnsembleConfig = None, step1_params=None) -> EnsembleModel:
    """Fit step 1 on all rows, then one weight set per mini-batch.

    Each member learns its weights from its own batch. With
    ``member_data="full"`` (default) a member then conditions on the whole
    training set when predicting; ``"batch"`` keeps it on its batch only.
    """
    config = config or EnsembleConfig()
    if config.member_data not in MEMBER_DATA:
        raise ValueError(f"member_data must be one of {MEMBER_DATA}")
    X, Y, _ = _prepare(X, Y)
    N, D = Y.shape
    plan = partition(N, config.resolved_batch_size(D))
    rows = plan.member_indices(config.leftover_policy)
    mconf = config.model

    t0 = time.perf_counter()
    params = step1_params if step1_params is not None else fit_step1(X, Y, None, mconf, n_jobs=config.n_jobs)
    t1 = time.perf_counter()

    inner = replace(mconf, n_jobs=1)

    def member(k, idx):
        if np.isnan(Y[idx]).all(axis=0).any():
            raise ValueError("a task has no observed targets in this batch")
        return fit_step2(X[idx], Y[idx], params, None, inner)

    outcomes = _map(member, rows, config.n_jobs)
    _raise_failures(outcomes, "member")
    weights = [w for _, w in outcomes]
    t2 = time.perf_counter()

    timings = {"step1": t1 - t0, "step2": t2 - t1}
    return EnsembleModel(list(params), weights, rows, X, Y, config.member_data, mconf.fit.jitter, timings)


def predict_ensemble(model: EnsembleModel, Xstar, include_noise=False, return_variance=True):
    """Elementwise average of the members' predictive means and variances."""
    means, variances = [], []
    for k in range(model.n_members):
        p = model.member(k).predict(Xstar, include_noise=include_noise, return_variance=return_variance)
        means.append(p.mean)
        variances.append(p.variance)
    mean = np.mean(means, axis=0)
    var = np.mean(variances, axis=0) if return_variance else None
    return MultiTaskPrediction(mean, var)
