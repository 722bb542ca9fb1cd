"""Cholesky helpers shared by the single- and multi-task code."""

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from .exceptions import NumericalError

DEFAULT_JITTER = 1e-10
_MAX_JITTER_TRIES = 6


def cholesky(K, jitter=DEFAULT_JITTER):
    """Lower Cholesky factor of ``K``.

    The matrix is factorized as given first. Only on failure is a diagonal
    jitter added, growing tenfold per attempt.
    """
    if not np.all(np.isfinite(K)):
        raise NumericalError("covariance contains non-finite entries")
    try:
        return sla.cholesky(K, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    scale = max(float(np.mean(np.diag(K))), 1.0)
    eps = jitter * scale
    n = K.shape[0]
    for _ in range(_MAX_JITTER_TRIES):
        try:
            return sla.cholesky(K + eps * np.eye(n), lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            eps *= 10.0
    raise NumericalError(f"matrix of size {n} not positive definite after jitter {eps / 10:g}")


def cho_solve(L, b):
    return sla.cho_solve((L, True), b, check_finite=False)


def cho_inverse(L, lower_only=False):
    """Symmetric inverse from a lower Cholesky factor.

    With ``lower_only`` the strict upper triangle is left as in ``L``
    (zero for factors from :func:`cholesky`), skipping the mirror copy.
    """
    inv, info = lapack.dpotri(L, lower=1)
    if info != 0:
        raise NumericalError(f"inverse from Cholesky factor failed (info={info})")
    if lower_only:
        return inv
    lower = np.tril(inv)
    return lower + np.tril(inv, -1).T


def logdet_from_cholesky(L):
    return 2.0 * float(np.sum(np.log(np.diag(L))))
