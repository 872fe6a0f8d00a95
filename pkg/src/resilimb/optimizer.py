"""Unconstrained L-BFGS with a strong Wolfe line search.

The line search is the bracket/zoom scheme of Nocedal & Wright (Alg. 3.5/3.6)
with safeguarded cubic interpolation.  Once a step satisfies the strong Wolfe
conditions, one extra cubic-interpolated trial is made from the data already
in hand and kept only if it also satisfies both conditions and lowers the
objective.  On quadratics that trial is the exact line minimizer, which gives
L-BFGS its finite-termination behaviour.

Objectives may return ``+inf`` to mark an infeasible point; the line search
then shortens the step.  NaN anywhere, or a non-finite value at the start
point, raises :class:`NonFiniteObjective`.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import EmptyParameterVector, NonFiniteObjective

Objective = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


class Termination(str, enum.Enum):
    GradientTolerance = "GradientTolerance"
    MaxIterations = "MaxIterations"
    LineSearchFailure = "LineSearchFailure"


@dataclass(frozen=True)
class LbfgsConfig:
    max_iterations: int = 100
    memory: int = 10
    gradient_tolerance: float = 1e-8
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    max_line_search_steps: int = 25
    polish_step: bool = True

    def __post_init__(self):
        if self.max_iterations < 1 or self.memory < 1 or self.max_line_search_steps < 1:
            raise ValueError("iteration counts and memory must be positive")
        if not 0 < self.wolfe_c1 < self.wolfe_c2 < 1:
            raise ValueError("need 0 < c1 < c2 < 1")


@dataclass(frozen=True)
class LineSearchStep:
    """Record of one accepted step, enough to re-check the Wolfe conditions."""

    step: float
    value_before: float
    value_after: float
    slope_before: float
    slope_after: float


@dataclass
class OptimizationTrace:
    iterations: int
    final_value: float
    final_gradient_norm: float
    termination_reason: Termination
    evaluations: int = 0
    values: list = field(default_factory=list)
    steps: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.termination_reason is Termination.GradientTolerance


def _evaluate(objective, x, *, allow_inf):
    value, grad = objective(x)
    value = float(value)
    grad = np.asarray(grad, dtype=float).reshape(-1)
    if np.isnan(value) or (np.isinf(value) and not (allow_inf and value > 0)):
        raise NonFiniteObjective(f"objective value {value} at x={x}")
    if np.isfinite(value) and not np.all(np.isfinite(grad)):
        raise NonFiniteObjective(f"non-finite gradient at x={x}")
    return value, grad


def _cubic_minimizer(a, fa, da, b, fb, db):
    """Minimizer of the cubic interpolating (a, fa, da) and (b, fb, db), or None."""
    if a == b:
        return None
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0:
        return None
    d2 = np.copysign(np.sqrt(disc), b - a)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    t = b - (b - a) * (db + d2 - d1) / denom
    return t if np.isfinite(t) else None


def _strong_wolfe(phi, f0, d0, alpha0, cfg: LbfgsConfig):
    """Return (alpha, f, g, slope) satisfying strong Wolfe, or None on failure."""
    c1, c2 = cfg.wolfe_c1, cfg.wolfe_c2
    budget = [cfg.max_line_search_steps]

    def wolfe_ok(a, fa, da):
        return np.isfinite(fa) and fa <= f0 + c1 * a * d0 and abs(da) <= -c2 * d0

    def evaluate(a):
        budget[0] -= 1
        return phi(a)

    def zoom(lo, hi):
        # lo/hi are (alpha, f, slope); lo always satisfies sufficient decrease
        while budget[0] > 0:
            a_lo, f_lo, d_lo = lo[:3]
            a_hi, f_hi, d_hi = hi[:3]
            width = a_hi - a_lo
            if abs(width) <= 1e-16 * max(1.0, abs(a_lo)):
                return None
            trial = None
            if np.isfinite(f_hi) and np.isfinite(d_hi):
                trial = _cubic_minimizer(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi)
            lo_b, hi_b = sorted((a_lo + 0.1 * width, a_hi - 0.1 * width))
            if trial is None or not lo_b <= trial <= hi_b:
                trial = a_lo + 0.5 * width
            fj, gj, dj = evaluate(trial)
            cur = (trial, fj, dj, gj)
            if not np.isfinite(fj) or fj > f0 + c1 * trial * d0 or fj >= f_lo:
                hi = cur
            else:
                if abs(dj) <= -c2 * d0:
                    return cur
                if dj * (a_hi - a_lo) >= 0:
                    hi = lo
                lo = cur
        return None

    prev = (0.0, f0, d0, None)
    alpha = alpha0
    first = True
    result = None
    while budget[0] > 0:
        fa, ga, da = evaluate(alpha)
        cur = (alpha, fa, da, ga)
        if not np.isfinite(fa) or fa > f0 + c1 * alpha * d0 or (not first and fa >= prev[1]):
            result = zoom(prev, cur)
            break
        if abs(da) <= -c2 * d0:
            result = cur
            break
        if da >= 0:
            result = zoom(cur, prev)
            break
        prev, first = cur, False
        alpha = 2.0 * alpha
    if result is None:
        return None

    alpha, fa, da, ga = result
    if cfg.polish_step and budget[0] > 0:
        t = _cubic_minimizer(0.0, f0, d0, alpha, fa, da)
        if t is not None and t > 0 and abs(t - alpha) > 1e-10 * alpha:
            ft, gt, dt = evaluate(t)
            if wolfe_ok(t, ft, dt) and ft < fa:
                return t, ft, gt, dt
    return alpha, fa, ga, da


def _two_loop(g, s_hist, y_hist):
    q = g.copy()
    alphas = []
    rhos = [1.0 / float(y @ s) for s, y in zip(s_hist, y_hist)]
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rhos)):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= float(s @ y) / float(y @ y)
    for s, y, rho, a in zip(s_hist, y_hist, rhos, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def minimize(objective: Objective, x0, config: LbfgsConfig | None = None):
    """Minimize ``objective`` (returning ``(value, gradient)``) from ``x0``.

    Returns ``(x_star, trace)``.  Each accepted step is logged in
    ``trace.steps`` so the strong Wolfe conditions can be audited.
    """
    cfg = config or LbfgsConfig()
    x = np.array(x0, dtype=float).reshape(-1)
    if x.size == 0:
        raise EmptyParameterVector("x0 is empty")
    n_eval = 1
    f, g = _evaluate(objective, x, allow_inf=False)
    if not np.isfinite(f):
        raise NonFiniteObjective("objective is not finite at the start point")
    s_hist: deque = deque(maxlen=cfg.memory)
    y_hist: deque = deque(maxlen=cfg.memory)
    values, steps = [f], []
    reason = Termination.MaxIterations
    iterations = 0

    while True:
        if np.abs(g).max() <= cfg.gradient_tolerance:
            reason = Termination.GradientTolerance
            break
        if iterations >= cfg.max_iterations:
            reason = Termination.MaxIterations
            break
        d = -_two_loop(g, s_hist, y_hist)
        slope = float(g @ d)
        if not slope < 0:
            s_hist.clear()
            y_hist.clear()
            d = -g
            slope = float(g @ d)
        alpha0 = 1.0 if s_hist else min(1.0, 1.0 / np.abs(g).max())

        def phi(a, x=x, d=d):
            nonlocal n_eval
            n_eval += 1
            fa, ga = _evaluate(objective, x + a * d, allow_inf=True)
            return fa, ga, (float(ga @ d) if np.isfinite(fa) else np.nan)

        found = _strong_wolfe(phi, f, slope, alpha0, cfg)
        if found is None:
            reason = Termination.LineSearchFailure
            break
        alpha, f_new, g_new, slope_new = found
        steps.append(LineSearchStep(alpha, f, f_new, slope, slope_new))
        s = alpha * d
        y = g_new - g
        if float(s @ y) > 1e-12 * float(y @ y) and float(y @ y) > 0:
            s_hist.append(s)
            y_hist.append(y)
        x = x + s
        f, g = f_new, g_new
        values.append(f)
        iterations += 1

    trace = OptimizationTrace(
        iterations=iterations,
        final_value=f,
        final_gradient_norm=float(np.abs(g).max()),
        termination_reason=reason,
        evaluations=n_eval,
        values=values,
        steps=steps,
    )
    return x, trace


def finite_difference_gradient(objective_value_only: Callable[[np.ndarray], float], x, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.array(x, dtype=float).reshape(-1)
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        fp = float(objective_value_only(x + e))
        fm = float(objective_value_only(x - e))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteObjective(f"non-finite value while differencing coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * step)
    return grad
