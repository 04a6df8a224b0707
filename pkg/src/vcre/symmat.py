"""Symmetric-matrix algebra: half-vectorization, duplication matrices, PSD projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataValidationError

# Accepted asymmetry: max|A - A^T| <= SYMMETRY_RTOL * max|A|.  Anything larger
# signals a bug upstream (the estimators below produce exact symmetry).
SYMMETRY_RTOL = 1e-10


def symmetrize(a, rtol: float = SYMMETRY_RTOL) -> np.ndarray:
    """Return the symmetric average of a square matrix, rejecting real asymmetry."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DataValidationError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DataValidationError("matrix has non-finite entries")
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    drift = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    if drift > rtol * scale:
        raise DataValidationError(
            f"matrix asymmetry {drift:.3e} exceeds tolerance {rtol * scale:.3e}"
        )
    return 0.5 * (a + a.T)


@dataclass(frozen=True, eq=False)
class SymMatrix:
    """Symmetric square matrix; entries are symmetrized on construction."""

    entries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entries", symmetrize(self.entries))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


def _as_symmetric(a) -> np.ndarray:
    if isinstance(a, SymMatrix):
        return a.entries
    return symmetrize(a)


def vech(a) -> np.ndarray:
    """Stack the lower triangle column by column into a q(q+1)/2 vector.

    Ordering: column 1 rows 1..q, column 2 rows 2..q, and so on, which makes
    the companion duplication matrix the standard one.
    """
    m = _as_symmetric(a)
    q = m.shape[0]
    return np.concatenate([m[j:, j] for j in range(q)])


def unvech(v, q: int) -> np.ndarray:
    """Inverse of :func:`vech` for dimension q."""
    v = np.asarray(v, dtype=float)
    if v.shape != (q * (q + 1) // 2,):
        raise DataValidationError(f"expected vector of length {q * (q + 1) // 2}")
    out = np.zeros((q, q))
    k = 0
    for j in range(q):
        for i in range(j, q):
            out[i, j] = v[k]
            out[j, i] = v[k]
            k += 1
    return out


@dataclass(frozen=True, eq=False)
class DuplicationMap:
    """Zero-one matrix R with vec(A) = R @ vech(A) for every symmetric A."""

    q: int
    matrix: np.ndarray

    @property
    def pinv(self) -> np.ndarray:
        """(R^T R)^{-1} R^T; maps vec of a symmetric matrix back to vech."""
        r = self.matrix
        # R^T R is diagonal with entries 1 (diagonal positions) or 2.
        scale = 1.0 / np.sum(r, axis=0)
        return scale[:, None] * r.T


def duplication_matrix(q: int) -> DuplicationMap:
    """Build the q^2 x q(q+1)/2 duplication matrix; exactly one 1 per row."""
    if q < 1:
        raise DataValidationError(f"dimension must be >= 1, got {q}")
    half = q * (q + 1) // 2
    pos = {}
    k = 0
    for j in range(q):
        for i in range(j, q):
            pos[(i, j)] = k
            k += 1
    r = np.zeros((q * q, half))
    for j in range(q):  # vec stacks columns
        for i in range(q):
            r[j * q + i, pos[(max(i, j), min(i, j))]] = 1.0
    return DuplicationMap(q=q, matrix=r)


def nearest_psd(a) -> np.ndarray:
    """Project a symmetric matrix onto the PSD cone by clipping negative eigenvalues.

    This is the Frobenius-nearest PSD matrix; a no-op when the input is
    already PSD.
    """
    m = _as_symmetric(a)
    w, v = np.linalg.eigh(m)
    if w.size == 0 or w[0] >= 0.0:
        return m.copy()
    clipped = (v * np.maximum(w, 0.0)) @ v.T
    return 0.5 * (clipped + clipped.T)
