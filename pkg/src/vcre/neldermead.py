"""Downhill-simplex minimization with value-spread termination and restarts.

Standard reflect / expand / contract / shrink moves.  The loop stops when
the spread of the vertex values falls below the tolerance or the iteration
budget is exhausted; optional restarts rebuild a fresh simplex around the
best point found so far, which guards against premature collapse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

REFLECT = 1.0
EXPAND = 2.0
CONTRACT = 0.5
SHRINK = 0.5


@dataclass
class SimplexResult:
    """Outcome of a simplex minimization."""

    x: np.ndarray
    fun: float
    converged: bool
    iterations: int
    n_eval: int
    spread: float
    restarts_used: int
    best_history: np.ndarray  # best vertex value after each iteration


def _value(f, x, counter):
    counter[0] += 1
    v = f(x)
    v = float(v)
    if math.isnan(v):
        return math.inf
    return v


def _run_simplex(f, x0, step, tol, max_iter, counter, history):
    dim = x0.size
    simplex = np.tile(x0, (dim + 1, 1))
    for i in range(dim):
        simplex[i + 1, i] += step
    values = np.array([_value(f, v, counter) for v in simplex])
    if not np.any(np.isfinite(values)):
        raise NumericalError("objective is non-finite at every initial simplex vertex")
    iterations = 0
    while iterations < max_iter:
        order = np.argsort(values, kind="stable")
        simplex = simplex[order]
        values = values[order]
        spread = values[-1] - values[0]
        if spread < tol:
            history.append(values[0])
            return simplex[0], values[0], True, iterations, spread
        iterations += 1
        centroid = np.mean(simplex[:-1], axis=0)
        reflected = centroid + REFLECT * (centroid - simplex[-1])
        f_r = _value(f, reflected, counter)
        if f_r < values[0]:
            expanded = centroid + EXPAND * (reflected - centroid)
            f_e = _value(f, expanded, counter)
            if f_e < f_r:
                simplex[-1], values[-1] = expanded, f_e
            else:
                simplex[-1], values[-1] = reflected, f_r
        elif f_r < values[-2]:
            simplex[-1], values[-1] = reflected, f_r
        else:
            if f_r < values[-1]:
                # outside contraction
                contracted = centroid + CONTRACT * (reflected - centroid)
            else:
                # inside contraction
                contracted = centroid + CONTRACT * (simplex[-1] - centroid)
            f_c = _value(f, contracted, counter)
            if f_c < min(f_r, values[-1]):
                simplex[-1], values[-1] = contracted, f_c
            else:
                best = simplex[0]
                for i in range(1, dim + 1):
                    simplex[i] = best + SHRINK * (simplex[i] - best)
                    values[i] = _value(f, simplex[i], counter)
        history.append(float(np.min(values)))
    order = np.argsort(values, kind="stable")
    simplex = simplex[order]
    values = values[order]
    return simplex[0], values[0], False, iterations, values[-1] - values[0]


def nelder_mead(
    f,
    x0,
    tol: float = 1e-8,
    max_iter: int | None = None,
    restarts: int = 2,
    step: float = 0.1,
) -> SimplexResult:
    """Minimize `f` from `x0` by the downhill-simplex method.

    Parameters
    ----------
    f : callable
        Objective mapping a 1-d parameter vector to a scalar.  Must be
        finite at x0; non-finite values elsewhere are treated as +inf.
    x0 : array-like
        Starting point.
    tol : float
        Termination threshold on the spread max(f) - min(f) of the simplex.
    max_iter : int, optional
        Iteration cap per run; defaults to 2000 * dim.
    restarts : int
        Number of fresh simplexes rebuilt around the incumbent best point;
        restarts guard against premature value-spread collapse.
    step : float
        Per-coordinate displacement of the initial simplex vertices.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size == 0:
        raise NumericalError("empty parameter vector")
    counter = [0]
    f0 = _value(f, x0, counter)
    if not math.isfinite(f0):
        raise NumericalError("objective is not finite at the starting point")
    if max_iter is None:
        max_iter = 2000 * x0.size
    history: list = []
    best_x, best_f = x0, f0
    converged = False
    total_iter = 0
    spread = math.inf
    used = 0
    for attempt in range(restarts + 1):
        x, fx, conv, iters, spread = _run_simplex(
            f, best_x, step, tol, max_iter, counter, history
        )
        total_iter += iters
        if fx <= best_f:
            best_x, best_f = x, fx
        converged = conv
        if attempt > 0:
            used = attempt
    return SimplexResult(
        x=np.asarray(best_x, dtype=float),
        fun=float(best_f),
        converged=converged,
        iterations=total_iter,
        n_eval=counter[0],
        spread=float(spread),
        restarts_used=used,
        best_history=np.asarray(history, dtype=float),
    )
