"""Sum-of-Kronecker multi-task covariance.

The joint covariance of the task-major stacked targets
``y = [y_1; ...; y_D]`` is::

    K_y = sum_q B_q kron K_q + diag(noise) kron I,   B_q = sum_j w_qj w_qj^T

``Q = D`` terms give the EMGPR model, ``Q = 1`` the ICM model, and delta
weights ``w_d = e_d`` the block-diagonal no-transfer model. An optional
observation mask drops the rows/columns of missing (task, point) pairs so
tasks need not be observed at every input (heterotopic data).
"""

import math
import threading
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import _linalg

__all__ = [
    "WeightSet",
    "StructuredCovariance",
    "assemble",
    "log_marginal_joint",
    "weight_grad",
    "trace_terms",
    "cross_cov",
    "coregionalization",
]

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class WeightSet:
    """Weight vectors ``vectors[q, j]`` of length D, for Q terms of rank k."""

    vectors: np.ndarray

    def __post_init__(self):
        v = np.array(self.vectors, dtype=float)
        if v.ndim == 2:
            v = v[:, None, :]
        if v.ndim != 3 or min(v.shape) < 1:
            raise ValueError(f"weight array must have shape (Q, k, D), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("weights must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @classmethod
    def delta(cls, D, rank=1, extra_scale=1e-2):
        """Kronecker-delta initialization ``w_d = e_d``.

        For rank > 1 the additional vectors start as small deltas on
        neighbouring tasks; exactly zero vectors would have zero gradient.
        """
        v = np.zeros((D, rank, D))
        for d in range(D):
            v[d, 0, d] = 1.0
            for j in range(1, rank):
                v[d, j, (d + j) % D] = extra_scale
        return cls(v)

    @classmethod
    def from_flat(cls, flat, shape):
        return cls(np.asarray(flat, dtype=float).reshape(shape))

    @property
    def n_terms(self):
        return self.vectors.shape[0]

    @property
    def rank(self):
        return self.vectors.shape[1]

    @property
    def n_tasks(self):
        return self.vectors.shape[2]

    @property
    def shape(self):
        return self.vectors.shape

    def flat(self):
        return self.vectors.ravel().copy()

    def coregionalization(self):
        """The Q coregionalization matrices ``B_q``, shape (Q, D, D)."""
        return np.einsum("qjd,qje->qde", self.vectors, self.vectors)

    def to_list(self):
        return self.vectors.tolist()


def coregionalization(weights: WeightSet):
    return weights.coregionalization()


def _full_matrix(B, grams):
    """Dense ``sum_q B_q kron K_q`` without noise."""
    Q, D, _ = B.shape
    N, M = grams[0].shape
    stacked = np.stack(grams).reshape(Q, N * M)
    out = (B.reshape(Q, D * D).T @ stacked).reshape(D, D, N, M)
    return np.ascontiguousarray(out.transpose(0, 2, 1, 3)).reshape(D * N, D * M)


def _mask_indices(observed, D, N):
    if observed is None:
        return None
    observed = np.asarray(observed, dtype=bool)
    if observed.shape != (N, D):
        raise ValueError(f"observation mask must have shape {(N, D)}, got {observed.shape}")
    return np.flatnonzero(observed.T.ravel())


class StructuredCovariance:
    """Assembled training covariance with a lazily computed Cholesky factor.

    ``idx`` holds the positions (task-major, ``d * N + i``) of observed
    entries; ``matrix`` is restricted to them.
    """

    def __init__(self, weights, grams, noise_var, observed=None, jitter=_linalg.DEFAULT_JITTER):
        grams = [np.asarray(K, dtype=float) for K in grams]
        if len(grams) != weights.n_terms:
            raise ValueError(f"{weights.n_terms} weight terms but {len(grams)} Gram matrices")
        N = grams[0].shape[0]
        for K in grams:
            if K.shape != (N, N):
                raise ValueError(f"Gram matrices must all be {N}x{N}, got {K.shape}")
        D = weights.n_tasks
        noise_var = np.asarray(noise_var, dtype=float).ravel()
        if noise_var.shape != (D,):
            raise ValueError(f"expected {D} noise variances, got {noise_var.size}")
        if np.any(noise_var < 0) or not np.all(np.isfinite(noise_var)):
            raise ValueError("noise variances must be finite and non-negative")

        self.weights = weights
        self.grams = grams
        self.noise_var = noise_var
        self.n_points = N
        self.n_tasks = D
        self.jitter = jitter
        self.idx = _mask_indices(observed, D, N)

        full = _full_matrix(weights.coregionalization(), grams)
        full[np.diag_indices_from(full)] += np.repeat(noise_var, N)
        self.matrix = full if self.idx is None else full[np.ix_(self.idx, self.idx)]
        self.matrix.setflags(write=False)
        self._chol = None
        self._lock = threading.Lock()

    @property
    def size(self):
        return self.matrix.shape[0]

    @property
    def cholesky(self):
        if self._chol is None:
            with self._lock:
                if self._chol is None:
                    L = _linalg.cholesky(self.matrix, self.jitter)
                    L.setflags(write=False)
                    self._chol = L
        return self._chol

    def solve(self, b):
        return _linalg.cho_solve(self.cholesky, b)

    def logdet(self):
        return _linalg.logdet_from_cholesky(self.cholesky)

    def inverse(self):
        return _linalg.cho_inverse(self.cholesky)

    def embed_vector(self, v):
        """Scatter a vector over observed entries into the full ND layout."""
        if self.idx is None:
            return v
        full = np.zeros(self.n_points * self.n_tasks)
        full[self.idx] = v
        return full

    def embed(self, A):
        """Scatter a matrix over observed entries into the full ND x ND layout."""
        if self.idx is None:
            return A
        n = self.n_points * self.n_tasks
        full = np.zeros((n, n))
        full[np.ix_(self.idx, self.idx)] = A
        return full


def assemble(weights: WeightSet, grams, noise_var, observed=None, jitter=_linalg.DEFAULT_JITTER):
    return StructuredCovariance(weights, grams, noise_var, observed=observed, jitter=jitter)


def _check_y(cov, y):
    y = np.asarray(y, dtype=float).ravel()
    if y.size != cov.size:
        raise ValueError(f"target vector has length {y.size}, covariance has size {cov.size}")
    return y


def log_marginal_joint(cov: StructuredCovariance, y) -> float:
    y = _check_y(cov, y)
    a = sla.solve_triangular(cov.cholesky, y, lower=True, check_finite=False)
    return -0.5 * float(a @ a) - 0.5 * cov.logdet() - 0.5 * y.size * LOG_2PI


def trace_terms(cov: StructuredCovariance, y, grams=None):
    """Block traces of ``A = gamma gamma^T - K_y^{-1}`` against kernel matrices.

    Returns ``(T, A_diag)`` where ``T[q, a, b] = tr(A_ab K_q)`` for each
    symmetric matrix in ``grams`` (defaults to the covariance's own Gram
    matrices) and ``A_diag`` is the diagonal of ``A`` in the full
    task-major layout (zero at unobserved entries). Every gradient of the
    joint log marginal is a contraction of these quantities.
    """
    y = _check_y(cov, y)
    D, N = cov.n_tasks, cov.n_points
    g = cov.embed_vector(cov.solve(y)).reshape(D, N)
    # only the lower triangle of the inverse is formed; the embedding keeps
    # it lower because observed positions are sorted
    S = cov.embed(_linalg.cho_inverse(cov.cholesky, lower_only=True))
    s_diag = np.diag(S).copy()
    A_diag = g.ravel() ** 2 - s_diag
    grams = cov.grams if grams is None else grams
    if not grams:
        return np.zeros((0, D, D)), A_diag
    Ks = np.stack(grams)
    Q = len(grams)
    blocks = S.reshape(D, N, D, N).transpose(0, 2, 1, 3).reshape(D * D, N * N)
    U = (blocks @ Ks.reshape(Q, N * N).T).T.reshape(Q, D, D)
    # tr(S_ab K) = U[a, b] + U[b, a], minus the doubly counted diagonal when a == b
    T_s = U + U.transpose(0, 2, 1)
    T_s[:, np.arange(D), np.arange(D)] -= np.diagonal(Ks, axis1=1, axis2=2) @ s_diag.reshape(D, N).T
    T_g = np.matmul(np.matmul(g, Ks), g.T)
    return T_g - T_s, A_diag


def weight_grad(cov: StructuredCovariance, y) -> np.ndarray:
    """Gradient of ``log_marginal_joint`` with respect to every weight entry.

    Perturbing entry ``l`` of ``w_qj`` changes ``K_y`` by
    ``(w e_l^T + e_l w^T) kron K_q``, whose trace against ``A`` collapses
    to ``(T_q w_qj)[l]``. The result has the shape of ``cov.weights``.
    """
    T, _ = trace_terms(cov, y)
    return np.einsum("qab,qjb->qja", T, cov.weights.vectors)


def noise_grad(cov: StructuredCovariance, y, A_diag=None) -> np.ndarray:
    """Gradient of ``log_marginal_joint`` with respect to each noise variance."""
    if A_diag is None:
        _, A_diag = trace_terms(cov, y, grams=[])
    D, N = cov.n_tasks, cov.n_points
    return 0.5 * A_diag.reshape(D, N).sum(axis=1)


def cross_cov(weights: WeightSet, grams_cross, observed=None) -> np.ndarray:
    """Cross-covariance between test outputs and (observed) training outputs.

    Block ``(d, d')`` is ``sum_q B_q[d, d'] K_q(X*, X)``; no noise term.
    Rows are task-major over the M test points, columns follow the
    training layout (restricted to ``observed`` if given).
    """
    grams_cross = [np.asarray(K, dtype=float) for K in grams_cross]
    if len(grams_cross) != weights.n_terms:
        raise ValueError(f"{weights.n_terms} weight terms but {len(grams_cross)} cross Gram matrices")
    shape = grams_cross[0].shape
    for K in grams_cross:
        if K.shape != shape:
            raise ValueError("cross Gram matrices must share one shape")
    out = _full_matrix(weights.coregionalization(), grams_cross)
    idx = _mask_indices(observed, weights.n_tasks, shape[1])
    return out if idx is None else out[:, idx]
