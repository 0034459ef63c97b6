"""Gradient-based minimizers and a finite-difference gradient oracle.

Objectives passed to the minimizers map a flat vector to ``(value, gradient)``.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DomainError, NumericError


@dataclass(frozen=True)
class LbfgsConfig:
    memory: int = 10
    max_iterations: int = 200
    grad_tolerance: float = 1e-5
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    max_line_search_steps: int = 20

    def __post_init__(self):
        if self.memory < 0:
            raise DomainError("memory must be >= 0")
        if self.max_iterations < 1 or self.max_line_search_steps < 1:
            raise DomainError("iteration limits must be positive")
        if not 0 < self.wolfe_c1 < self.wolfe_c2 < 1:
            raise DomainError("need 0 < wolfe_c1 < wolfe_c2 < 1")


class LineStep(NamedTuple):
    alpha: float
    f0: float
    slope0: float
    f: float
    slope: float


class LbfgsResult(NamedTuple):
    x: np.ndarray
    history: list  # objective value at x0 and after every accepted step
    status: str  # "converged", "max_iterations" or "line_search_failed"
    steps: list = []  # accepted LineStep records


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic through (a, fa, da) and (b, fb, db), or None."""
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if not np.isfinite(disc) or disc < 0:
        return None
    d2 = np.copysign(np.sqrt(disc), b - a)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    t = b - (b - a) * (db + d2 - d1) / denom
    return t if np.isfinite(t) else None


class _Phi:
    """phi(alpha) = f(x + alpha d) with evaluation bookkeeping."""

    def __init__(self, objective, x, d, budget):
        self.objective, self.x, self.d = objective, x, d
        self.budget = budget
        self.calls = 0
        self.best = None  # (f, alpha, g)

    def __call__(self, alpha):
        if self.calls >= self.budget:
            raise _Exhausted
        self.calls += 1
        f, g = self.objective(self.x + alpha * self.d)
        f = float(f)
        g = np.asarray(g, dtype=np.float64)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            return np.inf, np.inf, g
        if self.best is None or f < self.best[0]:
            self.best = (f, alpha, g)
        return f, float(g @ self.d), g


class _Exhausted(Exception):
    pass


def strong_wolfe_search(phi, f0, slope0, alpha0, c1, c2):
    """Bracketing plus zoom search for a step meeting the strong Wolfe conditions.

    Returns ``(alpha, f, slope, grad)``; raises ``_Exhausted`` when ``phi``
    runs out of evaluations.
    """

    def armijo(a, fa):
        return fa <= f0 + c1 * a * slope0

    def curvature(da):
        return abs(da) <= -c2 * slope0

    def zoom(lo, f_lo, d_lo, hi, f_hi, d_hi):
        while True:
            width = hi - lo
            t = None
            if np.isfinite(f_hi) and np.isfinite(d_hi):
                t = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
            left, right = sorted((lo + 0.1 * width, hi - 0.1 * width))
            if t is None or not left <= t <= right:
                t = lo + 0.5 * width
            ft, dt, gt = phi(t)
            if not armijo(t, ft) or ft >= f_lo:
                hi, f_hi, d_hi = t, ft, dt
            else:
                if curvature(dt):
                    return t, ft, dt, gt
                if dt * (hi - lo) >= 0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo = t, ft, dt

    prev, f_prev, d_prev = 0.0, f0, slope0
    alpha = alpha0
    first = True
    while True:
        fa, da, ga = phi(alpha)
        if not armijo(alpha, fa) or (not first and fa >= f_prev):
            return zoom(prev, f_prev, d_prev, alpha, fa, da)
        if curvature(da):
            return alpha, fa, da, ga
        if da >= 0:
            return zoom(alpha, fa, da, prev, f_prev, d_prev)
        prev, f_prev, d_prev = alpha, fa, da
        alpha *= 2.0
        first = False


def lbfgs_minimize(objective, x0, cfg=None):
    """Limited-memory BFGS with the two-loop recursion and a strong Wolfe line search.

    The initial inverse-Hessian scale is s.y / y.y from the newest pair. A
    failed line search ends the run at the best point seen, flagged through
    ``status`` rather than raised.
    """
    cfg = cfg or LbfgsConfig()
    x = np.array(x0, dtype=np.float64)
    f, g = objective(x)
    f = float(f)
    g = np.asarray(g, dtype=np.float64)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NumericError("objective is not finite at the starting point", iteration=0)
    history = [f]
    steps = []
    s_list, y_list = [], []
    status = "max_iterations"
    for _ in range(cfg.max_iterations):
        if np.max(np.abs(g), initial=0.0) < cfg.grad_tolerance:
            status = "converged"
            break
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y in zip(reversed(s_list), reversed(y_list)):
            rho = 1.0 / (y @ s)
            a = rho * (s @ q)
            q -= a * y
            alphas.append((rho, a))
        if s_list:
            q *= (s_list[-1] @ y_list[-1]) / (y_list[-1] @ y_list[-1])
        for (s, y), (rho, a) in zip(zip(s_list, y_list), reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        d = -q
        slope0 = float(g @ d)
        if not slope0 < 0:
            # lost descent through round-off: restart from steepest descent
            s_list.clear()
            y_list.clear()
            d = -g
            slope0 = float(g @ d)
        alpha0 = 1.0 if s_list else min(1.0, 1.0 / np.linalg.norm(g))

        phi = _Phi(objective, x, d, cfg.max_line_search_steps)
        try:
            alpha, f_new, slope, g_new = strong_wolfe_search(
                phi, f, slope0, alpha0, cfg.wolfe_c1, cfg.wolfe_c2)
        except _Exhausted:
            status = "line_search_failed"
            if phi.best is not None and phi.best[0] < f:
                f_best, a_best, g_best = phi.best
                x = x + a_best * d
                f, g = f_best, g_best
                history.append(f)
            break
        steps.append(LineStep(alpha, f, slope0, f_new, slope))
        x_new = x + alpha * d
        s_vec, y_vec = x_new - x, g_new - g
        x, f, g = x_new, f_new, g_new
        history.append(f)
        if cfg.memory > 0 and s_vec @ y_vec > 1e-12 * (y_vec @ y_vec):
            s_list.append(s_vec)
            y_list.append(y_vec)
            if len(s_list) > cfg.memory:
                s_list.pop(0)
                y_list.pop(0)
    else:
        if np.max(np.abs(g), initial=0.0) < cfg.grad_tolerance:
            status = "converged"
    return LbfgsResult(x, history, status, steps)


def sgd_minimize(objective, x0, eta, steps):
    """Plain gradient descent ``x <- x - eta * grad`` for a fixed number of steps."""
    if not eta >= 0:
        raise DomainError("eta must be non-negative")
    x = np.array(x0, dtype=np.float64)
    for i in range(steps):
        f, g = objective(x)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            raise NumericError("non-finite objective or gradient", iteration=i)
        x = x - eta * np.asarray(g, dtype=np.float64)
    return x


def finite_diff_grad(f, x, h=1e-5):
    """Central differences (f(x + h e_i) - f(x - h e_i)) / 2h, coordinate by coordinate."""
    if not h > 0:
        raise DomainError("step h must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return grad
