"""B-spline coefficient estimation under working independence and GLS weighting.

Each coefficient function is expanded in the same clamped B-spline basis with
equally spaced interior knots.  Working independence solves ordinary least
squares over all observations; the weighted fit solves generalized least
squares with the per-cluster covariance implied by estimated variance
components.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import cho_factor, cho_solve

from .data import LongitudinalDataset
from .errors import DataValidationError, NumericalError, RankError
from .varcomp import VarianceComponents


@dataclass(frozen=True)
class SplineSpec:
    """Clamped B-spline space: equally spaced interior knots on an interval."""

    n_interior_knots: int
    interval: tuple[float, float]
    degree: int = 3

    def __post_init__(self):
        lo, hi = self.interval
        if not (hi > lo):
            raise DataValidationError(f"invalid interval {self.interval}")
        if self.degree < 1:
            raise DataValidationError("spline degree must be at least 1")
        if self.n_interior_knots < 0:
            raise DataValidationError("interior knot count must be non-negative")

    @property
    def dim(self) -> int:
        """Basis dimension: interior knots + degree + 1."""
        return self.n_interior_knots + self.degree + 1

    def knots(self) -> np.ndarray:
        lo, hi = self.interval
        interior = np.linspace(lo, hi, self.n_interior_knots + 2)[1:-1]
        return np.concatenate(
            [np.full(self.degree + 1, lo), interior, np.full(self.degree + 1, hi)]
        )


def bspline_basis(spec: SplineSpec, u: float) -> np.ndarray:
    """Evaluate all basis functions at u by the Cox-de Boor recursion.

    The boundary knots are repeated degree+1 times, so the basis is
    (1, 0, ..., 0) at the left endpoint; the last knot span is treated as
    closed so the right endpoint evaluates to (0, ..., 0, 1).
    """
    lo, hi = spec.interval
    u = float(u)
    if u < lo or u > hi:
        raise DataValidationError(f"u={u} outside spline interval [{lo}, {hi}]")
    t = spec.knots()
    k = spec.degree
    n = t.size - 1
    vals = np.zeros(n)
    if u == hi:
        # rightmost non-degenerate span owns the closed endpoint
        for i in range(n - 1, -1, -1):
            if t[i] < t[i + 1]:
                vals[i] = 1.0
                break
    else:
        for i in range(n):
            if t[i] <= u < t[i + 1]:
                vals[i] = 1.0
                break
    for d in range(1, k + 1):
        for i in range(n - d):
            left = 0.0
            if t[i + d] > t[i]:
                left = (u - t[i]) / (t[i + d] - t[i]) * vals[i]
            right = 0.0
            if t[i + d + 1] > t[i + 1]:
                right = (t[i + d + 1] - u) / (t[i + d + 1] - t[i + 1]) * vals[i + 1]
            vals[i] = left + right
    return vals[: spec.dim]


def basis_matrix(spec: SplineSpec, us) -> np.ndarray:
    """Basis values for many points at once (vectorized Cox-de Boor)."""
    us = np.atleast_1d(np.asarray(us, dtype=float))
    lo, hi = spec.interval
    if us.size and (us.min() < lo or us.max() > hi):
        bad = us[(us < lo) | (us > hi)][0]
        raise DataValidationError(f"u={bad} outside spline interval [{lo}, {hi}]")
    t = spec.knots()
    k = spec.degree
    n = t.size - 1
    vals = np.zeros((us.size, n))
    # order 0: indicator of the half-open span, closed at the right endpoint
    right_span = 0
    for i in range(n - 1, -1, -1):
        if t[i] < t[i + 1]:
            right_span = i
            break
    at_end = us == hi
    for i in range(n):
        vals[:, i] = (t[i] <= us) & (us < t[i + 1])
    vals[at_end, :] = 0.0
    vals[at_end, right_span] = 1.0
    for d in range(1, k + 1):
        for i in range(n - d):
            acc = np.zeros(us.size)
            if t[i + d] > t[i]:
                acc += (us - t[i]) / (t[i + d] - t[i]) * vals[:, i]
            if t[i + d + 1] > t[i + 1]:
                acc += (t[i + d + 1] - us) / (t[i + d + 1] - t[i + 1]) * vals[:, i + 1]
            vals[:, i] = acc
    return vals[:, : spec.dim]


@dataclass(frozen=True, eq=False)
class SplineFit:
    """Fitted spline coefficients, one column per coefficient function."""

    spec: SplineSpec
    coefficients: np.ndarray  # (dim, p)
    mode: str  # "wi" | "wls"
    weighting: Optional[tuple[np.ndarray, float]] = None  # (Sigma used, sigma2 used)
    jittered_clusters: tuple[str, ...] = ()

    def evaluate(self, us) -> np.ndarray:
        """Coefficient function values at `us`, shape (len(us), p)."""
        return basis_matrix(self.spec, us) @ self.coefficients


def _design_rows(spec: SplineSpec, cluster) -> np.ndarray:
    # row for one observation: x-entry k scales the basis block k
    basis = basis_matrix(spec, cluster.u)  # (n_i, dim)
    p = cluster.X.shape[1]
    return np.hstack([cluster.X[:, [k]] * basis for k in range(p)])


def _solve_normal_equations(A: np.ndarray, rhs: np.ndarray, dim: int, p: int):
    try:
        c = cho_factor(A)
        theta = cho_solve(c, rhs)
    except np.linalg.LinAlgError:
        raise RankError(
            "stacked spline design is rank deficient; reduce the number of knots"
        ) from None
    if not np.all(np.isfinite(theta)):
        raise RankError(
            "stacked spline design is numerically rank deficient; reduce the knots"
        )
    return theta.reshape(p, dim).T  # (dim, p)


def fit_wi(ds: LongitudinalDataset, spec: SplineSpec) -> SplineFit:
    """Ordinary least squares over all observations, ignoring clustering."""
    P = spec.dim * ds.p
    A = np.zeros((P, P))
    rhs = np.zeros(P)
    for c in ds.clusters:
        B = _design_rows(spec, c)
        A += B.T @ B
        rhs += B.T @ c.y
    coef = _solve_normal_equations(A, rhs, spec.dim, ds.p)
    return SplineFit(spec=spec, coefficients=coef, mode="wi")


def _cluster_weight(c, Sigma: np.ndarray, sigma2: float, jitter_events: list):
    V = c.Z @ Sigma @ c.Z.T + sigma2 * np.eye(c.n)
    try:
        return cho_factor(V)
    except np.linalg.LinAlgError:
        eps = 1e-8 * np.trace(V) / c.n
        try:
            factor = cho_factor(V + eps * np.eye(c.n))
        except np.linalg.LinAlgError:
            raise NumericalError(
                f"cluster {c.id}: singular weight matrix even after jitter"
            ) from None
        jitter_events.append(c.id)
        return factor


def fit_wls(
    ds: LongitudinalDataset, spec: SplineSpec, vc: VarianceComponents
) -> SplineFit:
    """Generalized least squares with block-diagonal cluster weights.

    The weight of a cluster is the inverse of Z Sigma Z^T + sigma2 I built
    from the PSD-projected covariance estimate.  A singular weight is
    retried once with a small diagonal jitter (recorded on the fit).
    """
    Sigma = vc.sigma_psd.entries
    sigma2 = vc.sigma2
    P = spec.dim * ds.p
    A = np.zeros((P, P))
    rhs = np.zeros(P)
    jitter_events: list = []
    for c in ds.clusters:
        B = _design_rows(spec, c)
        factor = _cluster_weight(c, Sigma, sigma2, jitter_events)
        VB = cho_solve(factor, B)
        Vy = cho_solve(factor, c.y)
        A += B.T @ VB
        rhs += B.T @ Vy
    coef = _solve_normal_equations(A, rhs, spec.dim, ds.p)
    return SplineFit(
        spec=spec,
        coefficients=coef,
        mode="wls",
        weighting=(Sigma.copy(), float(sigma2)),
        jittered_clusters=tuple(jitter_events),
    )


def mise(estimate, truth, grid) -> float:
    """Trapezoid integral of the squared difference over `grid`.

    `estimate` and `truth` may be callables or arrays already evaluated on
    the grid; array lengths must match the grid.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise DataValidationError("grid must be a strictly increasing 1-d array")

    def on_grid(f, name):
        if callable(f):
            return np.asarray(f(grid), dtype=float)
        arr = np.asarray(f, dtype=float)
        if arr.shape[0] != grid.size:
            raise DataValidationError(f"{name} values do not match the grid length")
        return arr

    e = on_grid(estimate, "estimate")
    t = on_grid(truth, "truth")
    if e.shape != t.shape:
        raise DataValidationError("estimate and truth shapes differ")
    return float(trapezoid((e - t) ** 2, grid))


def imp(mise_wi: float, mise_wls: float) -> float:
    """Relative improvement (MISE_wi - MISE_wls) / MISE_wls; NaN when undefined."""
    if mise_wls < 0 or mise_wi < 0:
        raise DataValidationError("MISE values must be non-negative")
    if mise_wls == 0.0:
        return float("nan")
    return (mise_wi - mise_wls) / mise_wls
