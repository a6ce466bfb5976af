"""Limited-memory BFGS with a strong Wolfe line search."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

CONVERGED = "converged"
MAX_ITERATIONS = "max_iterations"
LINE_SEARCH_FAILED = "line_search_failed"


class NonFiniteObjectiveError(FloatingPointError):
    """Objective or gradient evaluated to a non-finite value."""

    def __init__(self, message, x):
        super().__init__(message)
        self.x = np.array(x, copy=True)


@dataclass(frozen=True)
class LbfgsOptions:
    history: int = 10
    max_iterations: int = 100
    gradient_tolerance: float = 1e-6
    c1: float = 1e-4
    c2: float = 0.9
    max_line_search: int = 30


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    objective: float
    gradient_norm: float
    step: float


@dataclass
class LbfgsResult:
    x: np.ndarray
    f: float
    grad: np.ndarray
    iterations: int
    status: str
    evaluations: int
    trace: list[TraceRecord] = field(default_factory=list)


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic interpolating (a, fa, ga), (b, fb, gb), or None."""
    d1 = ga + gb - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = gb - ga + 2.0 * d2
    if denom == 0:
        return None
    t = b - (b - a) * (gb + d2 - d1) / denom
    return t if math.isfinite(t) else None


def _insufficient(f, f0, alpha, g0, c1):
    # Near the optimum, decreases fall below the rounding of f; then any
    # non-increase counts as sufficient and the curvature test decides.
    slack = 0.0 if f > f0 else _ROUNDING * abs(f0)
    return f > f0 + c1 * alpha * g0 + slack


_ROUNDING = 1e-13


def _worse(f, fref, f0):
    # ties within rounding are resolved by the directional derivative
    return f > fref + _ROUNDING * abs(f0) or (f >= fref and f > f0)


def strong_wolfe(phi, f0, g0, alpha0, c1=1e-4, c2=0.9, max_iter=30, alpha_max=1e10):
    """Bracketing-and-zoom line search for the strong Wolfe conditions.

    ``phi(alpha)`` returns ``(f, dphi, payload)``. Returns ``(alpha, f,
    payload)`` or ``None`` when no acceptable step is found.
    """
    a_prev, f_prev, g_prev = 0.0, f0, g0
    alpha = alpha0
    for i in range(max_iter):
        f, g, pay = phi(alpha)
        if _insufficient(f, f0, alpha, g0, c1) or (i > 0 and _worse(f, f_prev, f0)):
            return _zoom(phi, f0, g0, a_prev, f_prev, g_prev, alpha, f, g, c1, c2, max_iter)
        if abs(g) <= -c2 * g0:
            return alpha, f, pay
        if g >= 0:
            return _zoom(phi, f0, g0, alpha, f, g, a_prev, f_prev, g_prev, c1, c2, max_iter)
        a_prev, f_prev, g_prev = alpha, f, g
        alpha = min(2.0 * alpha, alpha_max)
    return None


def _zoom(phi, f0, g0, lo, flo, glo, hi, fhi, ghi, c1, c2, max_iter):
    for _ in range(max_iter):
        width = hi - lo
        a = _cubic_min(lo, flo, glo, hi, fhi, ghi)
        # keep the trial point well inside the bracket
        if a is None or not (min(lo, hi) + 0.1 * abs(width) <= a <= max(lo, hi) - 0.1 * abs(width)):
            a = lo + 0.5 * width
        f, g, pay = phi(a)
        if _insufficient(f, f0, a, g0, c1) or _worse(f, flo, f0):
            hi, fhi, ghi = a, f, g
        else:
            if abs(g) <= -c2 * g0:
                return a, f, pay
            if g * (hi - lo) >= 0:
                hi, fhi, ghi = lo, flo, glo
            lo, flo, glo = a, f, g
        if abs(hi - lo) <= 1e-16 * max(1.0, abs(lo)):
            break
    return None


def lbfgs_minimize(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0,
    options: LbfgsOptions = LbfgsOptions(),
    callback: Optional[Callable[[TraceRecord], None]] = None,
) -> LbfgsResult:
    """Minimize ``fun`` (returning value and gradient) from ``x0``.

    Stops when the gradient 2-norm drops to ``gradient_tolerance``, after
    ``max_iterations`` accepted steps, or when the line search fails; the
    status string says which. Accepted objective values never increase.
    """
    x = np.array(x0, dtype=np.float64)
    evals = 0

    def evaluate(xx):
        nonlocal evals
        evals += 1
        f, g = fun(xx)
        f = float(f)
        g = np.asarray(g, dtype=np.float64)
        if not math.isfinite(f) or not np.all(np.isfinite(g)):
            raise NonFiniteObjectiveError(f"non-finite objective {f!r} at evaluation {evals}", xx)
        return f, g

    f, g = evaluate(x)
    gnorm = float(np.linalg.norm(g))
    trace = [TraceRecord(0, f, gnorm, 0.0)]
    if callback:
        callback(trace[0])
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []
    status = MAX_ITERATIONS
    it = 0
    if gnorm <= options.gradient_tolerance:
        return LbfgsResult(x, f, g, 0, CONVERGED, evals, trace)
    while it < options.max_iterations:
        # two-loop recursion
        q = -g
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = rho * (s @ q)
            alphas.append(a)
            q = q - a * y
        if s_hist:
            gamma = (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1])
            q = gamma * q
        for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
            b = rho * (y @ q)
            q = q + (a - b) * s
        d = q
        dg = float(d @ g)
        if not dg < 0:
            # lost descent; restart from steepest descent
            s_hist.clear(), y_hist.clear(), rho_hist.clear()
            d = -g
            dg = float(d @ g)
        alpha0 = 1.0 if s_hist else min(1.0, 1.0 / gnorm)

        def phi(alpha):
            xn = x + alpha * d
            fn, gn = evaluate(xn)
            return fn, float(gn @ d), (xn, gn)

        ls = strong_wolfe(phi, f, dg, alpha0, options.c1, options.c2, options.max_line_search)
        if ls is None:
            status = LINE_SEARCH_FAILED
            break
        alpha, f_new, (x_new, g_new) = ls
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)) and sy > 0:
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > options.history:
                s_hist.pop(0), y_hist.pop(0), rho_hist.pop(0)
        x, f, g = x_new, f_new, g_new
        it += 1
        gnorm = float(np.linalg.norm(g))
        rec = TraceRecord(it, f, gnorm, float(alpha))
        trace.append(rec)
        if callback:
            callback(rec)
        if gnorm <= options.gradient_tolerance:
            status = CONVERGED
            break
    return LbfgsResult(x, f, g, it, status, evals, trace)
