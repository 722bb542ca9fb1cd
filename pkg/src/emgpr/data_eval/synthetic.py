"""Synthetic multi-task data drawn from a known latent-process mixture.

Each task is ``f_d(x) = sum_q sum_j w_qj[d] u_qj(x)`` with independent
unit-variance SE latent processes ``u_qj``, plus white noise.
"""

import json
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from .._linalg import cholesky
from ..kernels import KernelSpec, gram
from .dataset import Dataset

__all__ = ["SyntheticConfig", "generate_synthetic", "default_mixture"]


@dataclass
class SyntheticConfig:
    n: int = 1000
    n_tasks: int = 10
    n_inputs: int = 2
    lengthscales: Optional[List[float]] = None
    weights: Optional[list] = None            # shape (Q, k, D) or (Q, D)
    coregionalization: Optional[list] = None  # shape (Q, D, D), PSD
    noise_std: object = 0.1                   # scalar or length-D
    input_range: float = 1.0
    seed: int = 0

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls(**json.load(fh))

    def to_dict(self):
        return asdict(self)


def default_mixture(D, seed=0, mixing=0.6):
    """A dense weight set: identity plus ``mixing`` times a random matrix."""
    rng = np.random.default_rng(seed)
    W = np.eye(D) + mixing * rng.standard_normal((D, D))
    return W[:, None, :]


def _mixing_vectors(config, D):
    if config.weights is not None and config.coregionalization is not None:
        raise ValueError("give either weights or coregionalization, not both")
    if config.coregionalization is not None:
        B = np.asarray(config.coregionalization, dtype=float)
        if B.ndim == 2:
            B = B[None]
        if B.shape[1:] != (D, D):
            raise ValueError(f"coregionalization matrices must be {D}x{D}")
        vecs = []
        for Bq in B:
            if not np.allclose(Bq, Bq.T, atol=1e-12):
                raise ValueError("coregionalization matrix is not symmetric")
            vals, U = np.linalg.eigh(Bq)
            if vals.min() < -1e-10 * max(1.0, vals.max()):
                raise ValueError(f"coregionalization matrix is not PSD (min eigenvalue {vals.min():.3g})")
            vecs.append((U * np.sqrt(np.clip(vals, 0, None))).T)
        return np.stack(vecs)
    if config.weights is None:
        return default_mixture(D, config.seed)
    W = np.asarray(config.weights, dtype=float)
    if W.ndim == 2:
        W = W[:, None, :]
    if W.ndim != 3 or W.shape[2] != D:
        raise ValueError(f"weights must have shape (Q, k, {D})")
    return W


def generate_synthetic(config: SyntheticConfig):
    """Draw a dataset; returns ``(dataset, truth)``.

    ``truth`` holds the mixing vectors, length-scales, noise levels and the
    noise-free latent task values at the sampled inputs.
    """
    D, P, N = config.n_tasks, config.n_inputs, config.n
    W = _mixing_vectors(config, D)
    Q, k, _ = W.shape
    ls = config.lengthscales
    if ls is None:
        ls = list(np.linspace(0.1, 0.4, Q)) if Q > 1 else [0.25]
    ls = np.asarray(ls, dtype=float).ravel()
    if ls.size == 1 and Q > 1:
        ls = np.repeat(ls, Q)
    if ls.size != Q:
        raise ValueError(f"{ls.size} length-scales for {Q} latent processes")
    noise = np.broadcast_to(np.asarray(config.noise_std, dtype=float), (D,)).copy()
    if np.any(noise < 0):
        raise ValueError("noise_std must be non-negative")

    rng = np.random.default_rng(config.seed)
    X = rng.uniform(0.0, config.input_range, size=(N, P))
    F = np.zeros((N, D))
    for q in range(Q):
        L = cholesky(gram(KernelSpec.se(ls[q]), X) + 1e-8 * np.eye(N))
        U = L @ rng.standard_normal((N, k))
        F += U @ W[q]
    Y = F + rng.standard_normal((N, D)) * noise
    dataset = Dataset(X, Y, [f"task{d}" for d in range(D)], [f"x{p}" for p in range(P)])
    truth = {"weights": W, "lengthscales": ls, "noise_std": noise, "latent": F}
    return dataset, truth
