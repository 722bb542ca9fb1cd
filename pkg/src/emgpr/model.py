"""Multi-task GP regressors built on the structured covariance.

``fit`` runs the two-step EMGPR learner: independent per-task
maximum-likelihood fits of length-scale and noise, then a joint fit of the
D weight vectors with those frozen, starting from Kronecker deltas.
``fit_no_transfer`` stops after the first step and ``fit_icm`` learns a
single shared kernel with a rank-R coregionalization matrix. All three
return an :class:`EmgprModel` with the same ``predict`` method.

Targets are an N x D array; ``NaN`` marks a task that is not observed at
that input.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .exceptions import NumericalError, TaskFitError
from .gp_single import FitConfig, LatentProcessParams, fit_task
from .kernels import KernelSpec, gram, gram_grads
from .optimizer import OptimizeProblem, maximize
from .structured_cov import (
    WeightSet,
    assemble,
    cross_cov,
    log_marginal_joint,
    trace_terms,
    weight_grad,
)

log = logging.getLogger(__name__)

__all__ = [
    "ModelConfig",
    "EmgprModel",
    "MultiTaskPrediction",
    "fit_step1",
    "fit_step2",
    "fit",
    "fit_no_transfer",
    "fit_icm",
    "predict",
]


@dataclass
class ModelConfig:
    init_lengthscale: float = 1.0
    init_noise_var: float = 0.02
    ard: bool = False
    rank: int = 1
    skip_step2: bool = False
    n_jobs: int = 1
    fit: FitConfig = field(default_factory=FitConfig)

    def initial_params(self, P):
        return LatentProcessParams.default(P, self.ard, self.init_lengthscale, self.init_noise_var)


@dataclass(frozen=True)
class MultiTaskPrediction:
    mean: np.ndarray
    variance: Optional[np.ndarray] = None


def _prepare(X, Y):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"{X.shape[0]} inputs but {Y.shape[0]} target rows")
    if not np.all(np.isfinite(X)):
        raise ValueError("inputs contain non-finite values")
    if np.any(np.isinf(Y)):
        raise ValueError("targets contain infinite values")
    observed = ~np.isnan(Y)
    if not observed.any(axis=0).all():
        raise ValueError("every task needs at least one observed target")
    return X, Y, observed


def _stack_targets(Y, observed):
    """Task-major vector of the observed targets."""
    return Y.T[observed.T]


class EmgprModel:
    """A fitted multi-task GP: Q kernels, Q weight terms and D noise levels."""

    def __init__(self, kind, kernels, weights, noise_var, X, Y, task_params=None, jitter=None):
        X, Y, observed = _prepare(X, Y)
        self.kind = kind
        self.kernels = list(kernels)
        self.weights = weights
        self.noise_var = np.asarray(noise_var, dtype=float)
        self.X = X
        self.Y = Y
        self.observed = observed
        self.task_params = task_params
        self.jitter = FitConfig().jitter if jitter is None else jitter
        full = bool(observed.all())
        self.cov = assemble(
            weights, [gram(k, X) for k in self.kernels], self.noise_var,
            observed=None if full else observed, jitter=self.jitter,
        )
        self.y = _stack_targets(Y, observed)
        self.alpha = self.cov.solve(self.y)

    @property
    def n_tasks(self):
        return self.weights.n_tasks

    def log_marginal(self):
        return log_marginal_joint(self.cov, self.y)

    def predict(self, Xstar, include_noise=False, return_variance=True) -> MultiTaskPrediction:
        return predict(self, Xstar, include_noise=include_noise, return_variance=return_variance)

    def with_training_data(self, X, Y):
        """Same parameters, different conditioning data."""
        return EmgprModel(self.kind, self.kernels, self.weights, self.noise_var, X, Y,
                          task_params=self.task_params, jitter=self.jitter)

    def to_dict(self):
        return {
            "kind": self.kind,
            "kernels": [k.to_dict() for k in self.kernels],
            "weights": self.weights.to_list(),
            "noise_var": self.noise_var.tolist(),
            "task_params": None if self.task_params is None else [p.to_dict() for p in self.task_params],
            "X": self.X.tolist(),
            "Y": [[None if np.isnan(v) else v for v in row] for row in self.Y.tolist()],
        }

    @classmethod
    def from_dict(cls, d):
        Y = np.array([[np.nan if v is None else v for v in row] for row in d["Y"]], dtype=float)
        tp = d.get("task_params")
        return cls(
            d["kind"], [KernelSpec.from_dict(k) for k in d["kernels"]], WeightSet(np.array(d["weights"])),
            d["noise_var"], np.array(d["X"], dtype=float), Y,
            task_params=None if tp is None else [LatentProcessParams.from_dict(p) for p in tp],
        )


def _map(fn, items, n_jobs):
    if n_jobs and n_jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            futures = [pool.submit(fn, i, item) for i, item in enumerate(items)]
            outcomes = []
            for f in futures:
                try:
                    outcomes.append((True, f.result()))
                except Exception as exc:  # collected, re-raised below with index
                    outcomes.append((False, exc))
            return outcomes
    outcomes = []
    for i, item in enumerate(items):
        try:
            outcomes.append((True, fn(i, item)))
        except Exception as exc:
            outcomes.append((False, exc))
    return outcomes


def _raise_failures(outcomes, kind):
    failed = [(i, exc) for i, (ok, exc) in enumerate(outcomes) if not ok]
    if failed:
        index, cause = failed[0]
        if len(failed) > 1:
            cause = "; ".join(f"{kind} {i}: {e}" for i, e in failed)
            index = [i for i, _ in failed]
        raise TaskFitError(index, cause, kind=kind) from failed[0][1]


def fit_step1(X, Y, init=None, config: ModelConfig = None, n_jobs=None) -> List[LatentProcessParams]:
    """Independent per-task ML fits of ``(lengthscale, noise_std)``.

    Task ``d`` uses only the rows where it is observed. Results do not
    depend on ``n_jobs``.
    """
    X, Y, observed = _prepare(X, Y)
    config = config or ModelConfig()
    D = Y.shape[1]
    if init is None:
        init = config.initial_params(X.shape[1])
    inits = list(init) if isinstance(init, (list, tuple)) else [init] * D
    if len(inits) != D:
        raise ValueError(f"{len(inits)} initial parameter sets for {D} tasks")

    def one(d, p0):
        rows = observed[:, d]
        return fit_task(X[rows], Y[rows, d], p0, config.fit).params

    outcomes = _map(one, inits, config.n_jobs if n_jobs is None else n_jobs)
    _raise_failures(outcomes, "task")
    return [r for _, r in outcomes]


def _weight_objective(grams, noise_var, observed, y, shape, jitter):
    def objective(w):
        weights = WeightSet.from_flat(w, shape)
        try:
            cov = assemble(weights, grams, noise_var, observed=observed, jitter=jitter)
            value = log_marginal_joint(cov, y)
            grad = weight_grad(cov, y)
        except NumericalError:
            return -np.inf, np.full(w.size, np.nan)
        return value, grad.ravel()

    return objective


def fit_step2(X, Y, step1_params: Sequence[LatentProcessParams], init_weights: WeightSet = None,
              config: ModelConfig = None) -> WeightSet:
    """Joint ML fit of the weight vectors with per-task kernels and noise frozen."""
    X, Y, observed = _prepare(X, Y)
    config = config or ModelConfig()
    D = Y.shape[1]
    if len(step1_params) != D:
        raise ValueError(f"{len(step1_params)} step-1 parameter sets for {D} tasks")
    if init_weights is None:
        init_weights = WeightSet.delta(D, rank=config.rank)
    if init_weights.n_terms != D or init_weights.n_tasks != D:
        raise ValueError(f"initial weights must have shape (D, k, D) with D={D}, got {init_weights.shape}")
    grams = [gram(p.kernel, X) for p in step1_params]
    noise_var = np.array([p.noise_var for p in step1_params])
    mask = None if observed.all() else observed
    y = _stack_targets(Y, observed)
    objective = _weight_objective(grams, noise_var, mask, y, init_weights.shape, config.fit.jitter)
    result = maximize(
        OptimizeProblem(
            objective, init_weights.flat(), max_iterations=config.fit.max_iterations,
            gtol=config.fit.gtol, ftol=config.fit.ftol,
        )
    )
    log.debug("fit_step2: %d iterations, %s, lml=%.6f", result.iterations, result.reason.value, result.fun)
    return WeightSet.from_flat(result.x, init_weights.shape)


def _from_step1(kind, X, Y, params, weights, config):
    return EmgprModel(
        kind, [p.kernel for p in params], weights, [p.noise_var for p in params], X, Y,
        task_params=list(params), jitter=config.fit.jitter,
    )


def fit(X, Y, config: ModelConfig = None, init=None) -> EmgprModel:
    """Two-step EMGPR fit (a single pass; no alternating refinement)."""
    config = config or ModelConfig()
    X, Y, _ = _prepare(X, Y)
    params = fit_step1(X, Y, init, config)
    D = Y.shape[1]
    if config.skip_step2:
        return _from_step1("gp", X, Y, params, WeightSet.delta(D, rank=config.rank), config)
    weights = fit_step2(X, Y, params, None, config)
    return _from_step1("emgpr", X, Y, params, weights, config)


def fit_no_transfer(X, Y, config: ModelConfig = None, init=None) -> EmgprModel:
    """Independent per-task GPs, expressed as EMGPR with delta weights."""
    config = replace(config or ModelConfig(), skip_step2=True, rank=1)
    return fit(X, Y, config, init=init)


def _initial_icm_weights(Y, observed, rank):
    """Top-``rank`` eigenpairs of the pairwise-complete task correlation."""
    D = Y.shape[1]
    C = np.eye(D)
    for a in range(D):
        for b in range(a + 1, D):
            both = observed[:, a] & observed[:, b]
            if both.sum() > 2:
                c = np.corrcoef(Y[both, a], Y[both, b])[0, 1]
                C[a, b] = C[b, a] = 0.0 if not np.isfinite(c) else c
    vals, vecs = np.linalg.eigh(C)
    order = np.argsort(vals)[::-1][:rank]
    W = vecs[:, order] * np.sqrt(np.maximum(vals[order], 1e-3))
    # fix the sign so that the largest-magnitude entry of each column is positive
    signs = np.sign(W[np.argmax(np.abs(W), axis=0), np.arange(rank)])
    return W * np.where(signs == 0, 1.0, signs)


def fit_icm(X, Y, rank: int, config: ModelConfig = None, init=None) -> EmgprModel:
    """ICM baseline: one shared kernel, ``B = W W^T`` of the given rank.

    Length-scale(s), W and per-task noise are fitted jointly by maximum
    likelihood, starting from the configured length-scale and noise and
    from the leading eigenvectors of the empirical task correlation.
    """
    X, Y, observed = _prepare(X, Y)
    config = config or ModelConfig()
    D = Y.shape[1]
    if not 1 <= rank <= D:
        raise ValueError(f"ICM rank must lie in [1, {D}], got {rank}")
    init = init or config.initial_params(X.shape[1])
    if isinstance(init, (list, tuple)):
        init = init[0]
    n_ls = init.kernel.n_params
    mask = None if observed.all() else observed
    y = _stack_targets(Y, observed)
    W0 = _initial_icm_weights(Y, observed, rank)
    noise0 = np.full(D, max(init.noise_std, config.fit.noise_floor))
    theta0 = np.concatenate([np.log(init.kernel.lengthscales), W0.ravel(), np.log(noise0)])
    lower = np.full(theta0.size, -np.inf)
    lower[-D:] = np.log(config.fit.noise_floor)
    n_w = D * rank

    def unpack(theta):
        kernel = init.kernel.with_lengthscales(np.exp(theta[:n_ls]))
        W = theta[n_ls:n_ls + n_w].reshape(D, rank)
        sigma = np.exp(theta[n_ls + n_w:])
        return kernel, W, sigma

    def objective(theta):
        kernel, W, sigma = unpack(theta)
        try:
            K = gram(kernel, X)
            weights = WeightSet(W.T[None])
            cov = assemble(weights, [K], sigma**2, observed=mask, jitter=config.fit.jitter)
            value = log_marginal_joint(cov, y)
            T, A_diag = trace_terms(cov, y, grams=[K] + gram_grads(kernel, X, K=K))
        except NumericalError:
            return -np.inf, np.full(theta.size, np.nan)
        B = W @ W.T
        g_ls = np.array([0.5 * np.sum(B * T[1 + i]) for i in range(n_ls)]) * np.array(kernel.lengthscales)
        g_w = T[0] @ W
        g_noise = A_diag.reshape(D, -1).sum(axis=1) * sigma**2
        return value, np.concatenate([g_ls, g_w.ravel(), g_noise])

    result = maximize(
        OptimizeProblem(
            objective, theta0, lower=lower, max_iterations=config.fit.max_iterations,
            gtol=config.fit.gtol, ftol=config.fit.ftol,
        )
    )
    log.debug("fit_icm: %d iterations, %s, lml=%.6f", result.iterations, result.reason.value, result.fun)
    kernel, W, sigma = unpack(result.x)
    return EmgprModel("icm", [kernel], WeightSet(W.T[None]), sigma**2, X, Y, jitter=config.fit.jitter)


def predict(model: EmgprModel, Xstar, include_noise=False, return_variance=True) -> MultiTaskPrediction:
    """Marginal predictive mean and variance for every (test point, task).

    Variances are for the latent functions unless ``include_noise`` adds
    each task's noise variance.
    """
    Xstar = np.asarray(Xstar, dtype=float)
    if Xstar.ndim == 1:
        Xstar = Xstar[:, None]
    if Xstar.shape[1] != model.X.shape[1]:
        raise ValueError(f"test inputs have {Xstar.shape[1]} columns, model expects {model.X.shape[1]}")
    M, D = Xstar.shape[0], model.n_tasks
    mask = None if model.cov.idx is None else model.observed
    Kc = cross_cov(model.weights, [gram(k, Xstar, model.X) for k in model.kernels], observed=mask)
    mean = (Kc @ model.alpha).reshape(D, M).T
    if not return_variance:
        return MultiTaskPrediction(mean)
    prior = np.einsum("qdd->d", model.weights.coregionalization())
    V = sla.solve_triangular(model.cov.cholesky, Kc.T, lower=True, check_finite=False)
    var = np.repeat(prior, M) - np.einsum("ij,ij->j", V, V)
    if np.any(var < -1e-10):
        log.warning("clamping %d negative predictive variances", int(np.sum(var < -1e-10)))
    var = np.maximum(var, 0.0).reshape(D, M).T
    if include_noise:
        var = var + model.noise_var[None, :]
    return MultiTaskPrediction(mean, var)
