"""Single-task exact GP regression with unit-amplitude SE/ARD kernels.

This is the per-task building block of the two-step learner and, on its
own, the no-transfer baseline. Hyperparameters are a kernel length-scale
vector and a noise standard deviation; the likelihood always uses the
noisy covariance ``K + sigma^2 I``.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import _linalg
from .exceptions import NumericalError
from .kernels import KernelSpec, gram, gram_grads
from .optimizer import OptimizeProblem, maximize

log = logging.getLogger(__name__)

__all__ = [
    "LatentProcessParams",
    "FitConfig",
    "FittedTaskGP",
    "log_marginal",
    "log_marginal_grad",
    "fit_task",
    "predict_task",
]

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class LatentProcessParams:
    kernel: KernelSpec
    noise_std: float

    def __post_init__(self):
        if not (np.isfinite(self.noise_std) and self.noise_std >= 0):
            raise ValueError(f"noise_std must be non-negative, got {self.noise_std}")
        object.__setattr__(self, "noise_std", float(self.noise_std))

    @property
    def noise_var(self):
        return self.noise_std**2

    @classmethod
    def default(cls, P=1, ard=False, lengthscale=1.0, noise_var=0.02):
        kernel = KernelSpec.ard([lengthscale] * P) if ard else KernelSpec.se(lengthscale)
        return cls(kernel, math.sqrt(noise_var))

    def to_vector(self, log_space=True):
        v = np.array(self.kernel.lengthscales + (self.noise_std,))
        return np.log(v) if log_space else v

    def from_vector(self, theta, log_space=True):
        v = np.exp(theta) if log_space else np.asarray(theta, dtype=float)
        return LatentProcessParams(self.kernel.with_lengthscales(v[:-1]), float(v[-1]))

    def to_dict(self):
        return {"kernel": self.kernel.to_dict(), "noise_std": self.noise_std}

    @classmethod
    def from_dict(cls, d):
        return cls(KernelSpec.from_dict(d["kernel"]), d["noise_std"])


@dataclass
class FitConfig:
    """Optimizer settings shared by every maximum-likelihood fit."""

    max_iterations: int = 120
    log_space: bool = True
    noise_floor: float = 1e-6
    gtol: float = 1e-5
    ftol: float = 1e-9
    jitter: float = _linalg.DEFAULT_JITTER


def _noisy_cov(params, X):
    K = gram(params.kernel, X)
    return K, K + params.noise_var * np.eye(K.shape[0])


def _check_data(X, y):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.size:
        raise ValueError(f"{X.shape[0]} inputs but {y.size} targets")
    if y.size < 1:
        raise ValueError("at least one training point is required")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets contain non-finite values")
    return X, y


def log_marginal(params: LatentProcessParams, X, y, jitter=_linalg.DEFAULT_JITTER) -> float:
    X, y = _check_data(X, y)
    _, C = _noisy_cov(params, X)
    L = _linalg.cholesky(C, jitter)
    a = sla.solve_triangular(L, y, lower=True, check_finite=False)
    return -0.5 * float(a @ a) - 0.5 * _linalg.logdet_from_cholesky(L) - 0.5 * y.size * LOG_2PI


def _value_and_grad(params, X, y, jitter):
    K, C = _noisy_cov(params, X)
    L = _linalg.cholesky(C, jitter)
    gamma = _linalg.cho_solve(L, y)
    value = -0.5 * float(y @ gamma) - 0.5 * _linalg.logdet_from_cholesky(L) - 0.5 * y.size * LOG_2PI
    # 0.5 tr((gamma gamma^T - C^-1) dC) for each parameter
    A = np.outer(gamma, gamma) - _linalg.cho_inverse(L)
    grad = [0.5 * np.sum(A * dK) for dK in gram_grads(params.kernel, X, K=K)]
    grad.append(params.noise_std * np.trace(A))
    return value, np.array(grad)


def log_marginal_grad(params: LatentProcessParams, X, y, log_space=True, jitter=_linalg.DEFAULT_JITTER):
    """Gradient of ``log_marginal`` over ``(lengthscales..., noise_std)``.

    With ``log_space`` the derivatives are taken with respect to the
    logarithms of those parameters, matching what the optimizer sees.
    """
    X, y = _check_data(X, y)
    _, grad = _value_and_grad(params, X, y, jitter)
    if log_space:
        grad = grad * params.to_vector(log_space=False)
    return grad


@dataclass(frozen=True)
class FittedTaskGP:
    params: LatentProcessParams
    X: np.ndarray
    y: np.ndarray
    chol: np.ndarray = field(repr=False)
    gamma: np.ndarray = field(repr=False)
    log_marginal: float = float("nan")

    @classmethod
    def build(cls, params, X, y, jitter=_linalg.DEFAULT_JITTER, lml=None):
        X, y = _check_data(X, y)
        _, C = _noisy_cov(params, X)
        L = _linalg.cholesky(C, jitter)
        gamma = _linalg.cho_solve(L, y)
        if lml is None:
            lml = -0.5 * float(y @ gamma) - 0.5 * _linalg.logdet_from_cholesky(L) - 0.5 * y.size * LOG_2PI
        for arr in (X, y, L, gamma):
            arr.setflags(write=False)
        return cls(params, X, y, L, gamma, lml)

    def predict(self, Xstar, include_noise=False):
        return predict_task(self, Xstar, include_noise=include_noise)


def fit_task(X, y, init: LatentProcessParams = None, config: FitConfig = None) -> FittedTaskGP:
    """Maximum-likelihood fit of length-scale(s) and noise for one task."""
    X, y = _check_data(X, y)
    config = config or FitConfig()
    init = init or LatentProcessParams.default(X.shape[1])
    if y.size > 1 and abs(float(np.mean(y))) >= 0.1:
        warnings.warn(f"targets look unnormalized (mean {np.mean(y):.3g}); a zero prior mean is assumed")

    log_space = config.log_space
    n = init.kernel.n_params + 1
    lower = np.full(n, -np.inf if log_space else 1e-6)
    lower[-1] = math.log(config.noise_floor) if log_space else config.noise_floor
    x0 = init.to_vector(log_space)
    x0 = np.maximum(x0, lower)

    def objective(theta):
        p = init.from_vector(theta, log_space)
        try:
            value, grad = _value_and_grad(p, X, y, config.jitter)
        except NumericalError:
            return -np.inf, np.full(n, np.nan)
        if log_space:
            grad = grad * np.exp(theta)
        return value, grad

    result = maximize(
        OptimizeProblem(
            objective, x0, lower=lower, max_iterations=config.max_iterations,
            gtol=config.gtol, ftol=config.ftol,
        )
    )
    log.debug("fit_task: %d iterations, %s, lml=%.6f", result.iterations, result.reason.value, result.fun)
    params = init.from_vector(result.x, log_space)
    return FittedTaskGP.build(params, X, y, config.jitter, lml=result.fun)


def predict_task(model: FittedTaskGP, Xstar, include_noise=False):
    """Predictive mean and marginal variance of the latent function.

    Negative variances from round-off are clamped to zero.
    """
    Xstar = np.asarray(Xstar, dtype=float)
    if Xstar.ndim == 1:
        Xstar = Xstar[:, None]
    if Xstar.shape[1] != model.X.shape[1]:
        raise ValueError(f"test inputs have {Xstar.shape[1]} columns, model expects {model.X.shape[1]}")
    Ks = gram(model.params.kernel, Xstar, model.X)
    mean = Ks @ model.gamma
    V = sla.solve_triangular(model.chol, Ks.T, lower=True, check_finite=False)
    var = 1.0 - np.einsum("ij,ij->j", V, V)
    if np.any(var < -1e-10):
        log.warning("clamping %d negative predictive variances", int(np.sum(var < -1e-10)))
    var = np.maximum(var, 0.0)
    if include_noise:
        var = var + model.params.noise_var
    return mean, var
