"""Box-constrained L-BFGS maximizer.

The objective callback returns ``(value, gradient)``. Internally the
negated objective is minimized with a two-loop L-BFGS direction, an
active-set projection for box bounds and a strong-Wolfe line search
(bracketing plus safeguarded cubic zoom). Non-finite objective values are
treated as rejected trial points, so the line search backtracks past them.
"""

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

log = logging.getLogger(__name__)

__all__ = ["OptimizeProblem", "OptimizeResult", "Termination", "maximize"]


class Termination(str, enum.Enum):
    CONVERGED_GRAD = "converged_grad"
    CONVERGED_FTOL = "converged_ftol"
    MAX_ITER = "max_iter"
    LINE_SEARCH_FAILURE = "line_search_failure"


@dataclass
class OptimizeProblem:
    fun: Callable
    x0: np.ndarray
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    max_iterations: int = 120
    gtol: float = 1e-5
    ftol: float = 1e-9
    memory: int = 10

    def __post_init__(self):
        self.x0 = np.array(self.x0, dtype=float).ravel()
        n = self.x0.size
        self.lower = np.full(n, -np.inf) if self.lower is None else np.array(self.lower, dtype=float).ravel()
        self.upper = np.full(n, np.inf) if self.upper is None else np.array(self.upper, dtype=float).ravel()
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("bound vectors must have the same length as the initial point")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        if np.any(self.x0 < self.lower) or np.any(self.x0 > self.upper):
            raise ValueError("initial point violates the bounds")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    iterations: int
    reason: Termination
    n_evals: int
    history: list = field(default_factory=list)


class _Counter:
    """Wraps the callback into a minimization of the negated objective."""

    def __init__(self, fun):
        self.fun = fun
        self.n = 0

    def __call__(self, x):
        self.n += 1
        value, grad = self.fun(x)
        value = float(value)
        grad = np.asarray(grad, dtype=float)
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            return np.inf, None
        return -value, -grad


def _snap(x, lo, hi):
    x = np.clip(x, lo, hi)
    tol = 1e-12 * np.maximum(1.0, np.abs(x))
    x = np.where(np.abs(x - lo) <= tol, lo, x)
    return np.where(np.abs(hi - x) <= tol, hi, x)


def _active(x, g, lo, hi):
    return ((x <= lo) & (g > 0)) | ((x >= hi) & (g < 0))


def _two_loop(g, S, Y):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(S), reversed(Y)):
        rho = 1.0 / np.dot(y, s)
        a = rho * np.dot(s, q)
        alphas.append((rho, a))
        q -= a * y
    if S:
        q *= np.dot(S[-1], Y[-1]) / np.dot(Y[-1], Y[-1])
    for (s, y), (rho, a) in zip(zip(S, Y), reversed(alphas)):
        b = rho * np.dot(y, q)
        q += (a - b) * s
    return -q


def _cubic_min(t0, f0, d0, t1, f1, d1):
    """Minimizer of the cubic interpolating two points and slopes, or None."""
    d1_ = d0 + d1 - 3.0 * (f0 - f1) / (t0 - t1)
    rad = d1_ * d1_ - d0 * d1
    if rad < 0:
        return None
    d2 = np.sign(t1 - t0) * np.sqrt(rad)
    denom = d1 - d0 + 2.0 * d2
    if denom == 0:
        return None
    return t1 - (t1 - t0) * (d1 + d2 - d1_) / denom


def _line_search(phi, f0, dphi0, t_init, t_max, c1=1e-4, c2=0.9, max_evals=25):
    """Strong-Wolfe search on ``phi(t) -> (f, dphi, payload)``.

    Returns ``(t, f, payload)`` for an accepted step with sufficient
    decrease, or ``None``.
    """
    evals = 0

    def zoom(lo, hi):
        nonlocal evals
        # lo: (t, f, dphi, payload) satisfying Armijo; hi: (t, f, dphi) bracket end
        while evals < max_evals:
            tl, fl, dl, _ = lo
            th, fh, dh = hi[:3]
            width = abs(th - tl)
            t = None
            if np.isfinite(fh) and dh is not None:
                t = _cubic_min(tl, fl, dl, th, fh, dh)
            if t is None or not np.isfinite(t):
                t = 0.5 * (tl + th)
            lo_b, hi_b = min(tl, th), max(tl, th)
            t = min(max(t, lo_b + 0.1 * width), hi_b - 0.1 * width)
            f, d, payload = phi(t)
            evals += 1
            if not np.isfinite(f) or f > f0 + c1 * t * dphi0 or f >= fl:
                hi = (t, f, d)
            else:
                if abs(d) <= -c2 * dphi0:
                    return t, f, payload
                if d * (th - tl) >= 0:
                    hi = (tl, fl, dl)
                lo = (t, f, d, payload)
            if width < 1e-14 * max(1.0, abs(tl)):
                break
        return (lo[0], lo[1], lo[3]) if lo[0] > 0 else None

    prev = (0.0, f0, dphi0, None)
    t = min(t_init, t_max)
    while evals < max_evals:
        f, d, payload = phi(t)
        evals += 1
        if not np.isfinite(f) or f > f0 + c1 * t * dphi0 or (prev[0] > 0 and f >= prev[1]):
            return zoom(prev, (t, f, d))
        if abs(d) <= -c2 * dphi0:
            return t, f, payload
        if d >= 0:
            return zoom((t, f, d, payload), prev[:3])
        if t >= t_max:
            return t, f, payload
        prev = (t, f, d, payload)
        t = min(2.0 * t, t_max)
    return (prev[0], prev[1], prev[3]) if prev[0] > 0 else None


def maximize(problem: OptimizeProblem) -> OptimizeResult:
    """Maximize ``problem.fun`` starting from ``problem.x0``.

    Accepted objective values never decrease, every returned point lies in
    the box, and at most ``max_iterations`` steps are taken.
    """
    p = problem
    lo, hi = p.lower, p.upper
    fun = _Counter(p.fun)
    x = p.x0.copy()
    f, g = fun(x)
    if g is None:
        raise ValueError("objective is not finite at the initial point")
    history = [-f]
    S, Y = [], []
    reason = Termination.MAX_ITER
    it = 0

    while it < p.max_iterations:
        act = _active(x, g, lo, hi)
        pg = np.where(act, 0.0, g)
        if np.max(np.abs(pg), initial=0.0) <= p.gtol:
            reason = Termination.CONVERGED_GRAD
            break

        d = _two_loop(g, S, Y)
        d[act] = 0.0
        if np.dot(d, g) >= 0:
            S.clear()
            Y.clear()
            d = -pg
        dphi0 = float(np.dot(d, g))

        with np.errstate(divide="ignore", invalid="ignore"):
            steps = np.where(d < 0, (lo - x) / d, np.where(d > 0, (hi - x) / d, np.inf))
        t_max = float(np.min(steps, initial=np.inf))
        t_init = 1.0 if S else min(1.0, 1.0 / max(np.linalg.norm(d), 1e-300))

        def phi(t):
            xt = _snap(x + t * d, lo, hi)
            ft, gt = fun(xt)
            if gt is None:
                return np.inf, None, None
            return ft, float(np.dot(gt, d)), (xt, gt)

        found = _line_search(phi, f, dphi0, t_init, t_max)
        if found is None and S:
            log.debug("line search failed at iteration %d; restarting from steepest descent", it)
            S.clear()
            Y.clear()
            continue
        if found is None:
            reason = Termination.LINE_SEARCH_FAILURE
            break

        _, f_new, (x_new, g_new) = found
        s, y = x_new - x, g_new - g
        sy = float(np.dot(s, y))
        if sy > 1e-10 * float(np.dot(y, y)):
            S.append(s)
            Y.append(y)
            if len(S) > p.memory:
                S.pop(0)
                Y.pop(0)
        f_old = f
        x, f, g = x_new, f_new, g_new
        it += 1
        history.append(-f)
        if abs(f_old - f) <= p.ftol * max(abs(f_old), abs(f), 1.0):
            reason = Termination.CONVERGED_FTOL
            break

    return OptimizeResult(x=x, fun=-f, iterations=it, reason=reason, n_evals=fun.n, history=history)
