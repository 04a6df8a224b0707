"""Local polynomial estimation of the functional coefficient vector.

The coefficient functions are fitted pointwise: at a target u the responses
are regressed on the covariates and their interactions with powers of
(U - u), weighted by the kernel.  Degree 1 yields the coefficient estimate
and its slope; degree 3 (used by the diagnostics module) additionally yields
curvature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import LongitudinalDataset
from .errors import (
    DataValidationError,
    EmptyWindowError,
    NumericalError,
    SingularWindowError,
)
from .kernels import KernelSpec


@dataclass(frozen=True, eq=False)
class CoefficientCurve:
    """Pointwise coefficient estimates on a strictly increasing grid.

    values[k] is the p-vector estimate at points[k]; slopes[k] the first
    derivative estimate.  ridged_points lists evaluation points where a
    ridge fallback was applied (empty unless ridge was requested).
    """

    points: np.ndarray  # (k,)
    values: np.ndarray  # (k, p)
    slopes: np.ndarray  # (k, p)
    ridged_points: tuple[float, ...] = ()

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        slopes = np.atleast_2d(np.asarray(self.slopes, dtype=float))
        if points.ndim != 1 or np.any(np.diff(points) <= 0):
            raise DataValidationError("evaluation points must be strictly increasing")
        if values.shape[0] != points.shape[0] or slopes.shape != values.shape:
            raise DataValidationError("curve arrays have inconsistent shapes")
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(slopes))):
            raise DataValidationError("curve has non-finite entries")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "slopes", slopes)
        object.__setattr__(self, "ridged_points", tuple(self.ridged_points))

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def values_at(self, us, interpolate: bool = False) -> np.ndarray:
        """Coefficient values at `us`: exact grid lookup, or linear interpolation."""
        us = np.asarray(us, dtype=float)
        if interpolate:
            return np.column_stack(
                [np.interp(us, self.points, self.values[:, k]) for k in range(self.p)]
            )
        idx = np.searchsorted(self.points, us)
        bad = (idx >= self.points.shape[0]) | (self.points[np.minimum(idx, len(self.points) - 1)] != us)
        if np.any(bad):
            missing = np.atleast_1d(us)[np.atleast_1d(bad)][:3]
            raise NumericalError(
                f"curve not evaluated at u={missing.tolist()} (exact mode); "
                "fit at the observed points or enable interpolation"
            )
        return self.values[idx]


@dataclass(frozen=True, eq=False)
class ResidualSet:
    """Per-cluster residual vectors, aligned with the dataset's cluster order."""

    cluster_ids: tuple[str, ...]
    residuals: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.cluster_ids) != len(self.residuals):
            raise DataValidationError("one residual vector per cluster required")
        object.__setattr__(
            self, "residuals", tuple(np.asarray(r, dtype=float) for r in self.residuals)
        )

    def stacked(self) -> np.ndarray:
        return np.concatenate(self.residuals)


class _Windows:
    """Sorted stacked observations with bandwidth window lookup."""

    def __init__(self, ds: LongitudinalDataset):
        order = np.argsort(ds.u_all, kind="stable")
        self.u = ds.u_all[order]
        self.X = ds.X_all[order]
        self.y = ds.y_all[order]
        self.u_min = float(self.u[0])
        self.u_max = float(self.u[-1])

    def window(self, u: float, h: float):
        lo = int(np.searchsorted(self.u, u - h, side="left"))
        hi = int(np.searchsorted(self.u, u + h, side="right"))
        return self.u[lo:hi], self.X[lo:hi], self.y[lo:hi]


def _chol_solve(moment: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    # moment is PSD by construction; Cholesky doubles as the singularity check
    low = np.linalg.cholesky(moment)
    z = np.linalg.solve(low, rhs)
    theta = np.linalg.solve(low.T, z)
    if not np.all(np.isfinite(theta)):
        raise np.linalg.LinAlgError("non-finite solution")
    return theta


def _solve_local(win: _Windows, u: float, kernel: KernelSpec, degree: int, ridge: bool):
    """Weighted polynomial fit at u; returns (theta blocks, used_ridge)."""
    uw, Xw, yw = win.window(u, kernel.bandwidth)
    if uw.size == 0:
        raise EmptyWindowError(
            f"no observations within bandwidth h={kernel.bandwidth} of u={u}"
        )
    w = kernel.weights(uw - u)
    if float(np.sum(w)) <= 0.0:
        raise EmptyWindowError(
            f"no positive kernel weight within h={kernel.bandwidth} of u={u}"
        )
    p = Xw.shape[1]
    need = (degree + 1) * p
    underdetermined = int(np.count_nonzero(w)) < need
    d = uw - u
    lam = np.hstack([Xw * (d**k)[:, None] for k in range(degree + 1)])
    lw = lam * w[:, None]
    moment = lam.T @ lw
    rhs = lw.T @ yw
    used_ridge = False
    try:
        if underdetermined:
            raise np.linalg.LinAlgError(f"fewer than {need} weighted observations")
        theta = _chol_solve(moment, rhs)
    except np.linalg.LinAlgError as reason:
        if not ridge:
            raise SingularWindowError(
                f"singular local moment matrix at u={u} (h={kernel.bandwidth}): {reason}"
            ) from None
        eps = 1e-8 * np.trace(moment) / moment.shape[0]
        try:
            theta = _chol_solve(moment + eps * np.eye(moment.shape[0]), rhs)
        except np.linalg.LinAlgError:
            raise SingularWindowError(
                f"singular local moment matrix at u={u} even after ridge"
            ) from None
        used_ridge = True
    return theta.reshape(degree + 1, p), used_ridge


def local_linear_fit(
    ds: LongitudinalDataset, u: float, kernel: KernelSpec, ridge: bool = False
):
    """Local-linear estimate of the coefficient vector and its slope at u.

    Minimizes the kernel-weighted squared error of the linearisation
    a + b (U - u) over all observations; returns (a_hat, b_hat), both
    p-vectors.  Raises if the window is empty or the 2p x 2p moment matrix
    is singular (optionally retried with a small ridge).
    """
    win = _Windows(ds)
    blocks, _ = _solve_local(win, float(u), kernel, degree=1, ridge=ridge)
    return blocks[0], blocks[1]


def fit_curve(
    ds: LongitudinalDataset,
    kernel: KernelSpec,
    eval_points=None,
    ridge: bool = False,
) -> CoefficientCurve:
    """Fit the coefficient curve at each evaluation point.

    Parameters
    ----------
    ds : LongitudinalDataset
    kernel : KernelSpec
    eval_points : array-like, optional
        Defaults to all distinct observed index values.  Points outside the
        observed range are rejected.
    ridge : bool
        Enable the ridge fallback for singular windows; affected points are
        recorded on the returned curve.
    """
    win = _Windows(ds)
    if eval_points is None:
        points = np.unique(ds.u_all)
    else:
        points = np.unique(np.asarray(eval_points, dtype=float))
        if points.size == 0:
            raise DataValidationError("no evaluation points given")
        outside = points[(points < win.u_min) | (points > win.u_max)]
        if outside.size:
            raise DataValidationError(
                f"evaluation points outside observed range "
                f"[{win.u_min}, {win.u_max}]: {outside[:3].tolist()}"
            )
    values = np.empty((points.size, ds.p))
    slopes = np.empty((points.size, ds.p))
    ridged = []
    for i, u in enumerate(points):
        try:
            blocks, used_ridge = _solve_local(win, float(u), kernel, degree=1, ridge=ridge)
        except NumericalError as e:
            raise type(e)(f"eval point u={u}: {e}") from e
        values[i] = blocks[0]
        slopes[i] = blocks[1]
        if used_ridge:
            ridged.append(float(u))
    return CoefficientCurve(
        points=points, values=values, slopes=slopes, ridged_points=tuple(ridged)
    )


def curvature_at_points(
    ds: LongitudinalDataset, kernel: KernelSpec, points, ridge: bool = False
) -> np.ndarray:
    """Second-derivative estimates at `points` via a local-cubic fit.

    Returns an array (len(points), p); the curvature is twice the quadratic
    coefficient of the fitted cubic.  The window must contain at least 4p
    weighted observations.
    """
    win = _Windows(ds)
    points = np.asarray(points, dtype=float)
    out = np.empty((points.size, ds.p))
    for i, u in enumerate(points):
        try:
            blocks, _ = _solve_local(win, float(u), kernel, degree=3, ridge=ridge)
        except NumericalError as e:
            raise type(e)(f"eval point u={u}: {e}") from e
        out[i] = 2.0 * blocks[2]
    return out


def residuals(
    ds: LongitudinalDataset, curve: CoefficientCurve, interpolate: bool = False
) -> ResidualSet:
    """Smoother residuals y - x^T a_hat(u), one vector per cluster.

    Exact mode (default) requires the curve to contain every observed index
    value; interpolation mode reads a_hat off the curve's grid linearly.
    """
    rs = []
    ids = []
    for c in ds.clusters:
        a_vals = curve.values_at(c.u, interpolate=interpolate)
        rs.append(c.y - np.sum(c.X * a_vals, axis=1))
        ids.append(c.id)
    return ResidualSet(cluster_ids=tuple(ids), residuals=tuple(rs))


def write_curve_csv(curve: CoefficientCurve, target) -> None:
    """Export a curve as CSV with columns u, a1..ap, b1..bp."""
    import csv

    stream, owned = (target, False) if hasattr(target, "write") else (
        open(target, "w", encoding="utf-8", newline=""),
        True,
    )
    try:
        writer = csv.writer(stream)
        p = curve.p
        writer.writerow(
            ["u"] + [f"a{k}" for k in range(1, p + 1)] + [f"b{k}" for k in range(1, p + 1)]
        )
        for i in range(curve.points.size):
            writer.writerow(
                [repr(float(curve.points[i]))]
                + [repr(float(v)) for v in curve.values[i]]
                + [repr(float(v)) for v in curve.slopes[i]]
            )
    finally:
        if owned:
            stream.close()
