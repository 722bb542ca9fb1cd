"""Squared-exponential kernels with unit amplitude.

Two variants are supported: ``se`` with one global length-scale and ``ard``
with one length-scale per input dimension. Gram matrices are plain
``ndarray`` objects; a Gram of an input set with itself is exactly
symmetric with a unit diagonal.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "KernelSpec",
    "kernel_eval",
    "gram",
    "gram_grad_lengthscale",
    "gram_grads",
]

KINDS = ("se", "ard")


@dataclass(frozen=True)
class KernelSpec:
    kind: str
    lengthscales: tuple

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}; expected one of {KINDS}")
        ls = tuple(float(a) for a in np.atleast_1d(self.lengthscales))
        if len(ls) == 0:
            raise ValueError("at least one length-scale is required")
        if self.kind == "se" and len(ls) != 1:
            raise ValueError(f"SE kernel takes exactly one length-scale, got {len(ls)}")
        if not all(np.isfinite(a) and a > 0 for a in ls):
            raise ValueError(f"length-scales must be finite and positive, got {ls}")
        object.__setattr__(self, "lengthscales", ls)

    @classmethod
    def se(cls, lengthscale=1.0):
        return cls("se", (lengthscale,))

    @classmethod
    def ard(cls, lengthscales):
        return cls("ard", tuple(lengthscales))

    @property
    def n_params(self):
        return len(self.lengthscales)

    def with_lengthscales(self, lengthscales):
        return KernelSpec(self.kind, tuple(lengthscales))

    def _scales(self, P):
        """Per-dimension length-scales for inputs with ``P`` columns."""
        if self.kind == "ard" and len(self.lengthscales) != P:
            raise ValueError(
                f"ARD kernel has {len(self.lengthscales)} length-scales but inputs have {P} columns"
            )
        return np.broadcast_to(np.asarray(self.lengthscales), (P,))

    def to_dict(self):
        return {"kind": self.kind, "lengthscales": list(self.lengthscales)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], tuple(d["lengthscales"]))


def _as_inputs(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"inputs must be 2-D, got shape {X.shape}")
    return X


def kernel_eval(spec: KernelSpec, x, x2) -> float:
    x = np.asarray(x, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x.shape != x2.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {x2.shape}")
    a = spec._scales(x.size)
    return float(np.exp(-0.5 * np.sum(((x - x2) / a) ** 2)))


def _scaled_sqdist(spec, X, X2):
    a = spec._scales(X.shape[1])
    diff = (X[:, None, :] - X2[None, :, :]) / a
    return np.einsum("ijp,ijp->ij", diff, diff)


def gram(spec: KernelSpec, X, X2=None) -> np.ndarray:
    """Gram matrix ``k(X_i, X2_j)``; ``X2=None`` means ``X2 = X``."""
    X = _as_inputs(X)
    symmetric = X2 is None or X2 is X
    X2 = X if X2 is None else _as_inputs(X2)
    if X.shape[1] != X2.shape[1]:
        raise ValueError(f"column mismatch: {X.shape[1]} vs {X2.shape[1]}")
    if not symmetric and X.shape == X2.shape and np.array_equal(X, X2):
        symmetric = True
    K = np.exp(-0.5 * _scaled_sqdist(spec, X, X2))
    if symmetric:
        # (x_i - x_j)^2 == (x_j - x_i)^2 bitwise, so only the diagonal needs pinning
        np.fill_diagonal(K, 1.0)
    return K


def gram_grad_lengthscale(spec: KernelSpec, X, dim=0, K=None) -> np.ndarray:
    """Derivative of ``gram(spec, X)`` with respect to length-scale ``dim``."""
    X = _as_inputs(X)
    if not 0 <= dim < spec.n_params:
        raise IndexError(f"length-scale index {dim} out of range for {spec.n_params} parameter(s)")
    if K is None:
        K = gram(spec, X)
    a = spec.lengthscales[dim]
    if spec.kind == "se":
        d2 = _scaled_sqdist(KernelSpec.se(1.0), X, X)
    else:
        if spec.n_params != X.shape[1]:
            raise ValueError("ARD length-scale count does not match input columns")
        col = X[:, dim]
        d2 = (col[:, None] - col[None, :]) ** 2
    return K * d2 / a**3


def gram_grads(spec: KernelSpec, X, K=None):
    """List of Gram derivatives, one per length-scale."""
    if K is None:
        K = gram(spec, X)
    return [gram_grad_lengthscale(spec, X, i, K=K) for i in range(spec.n_params)]
