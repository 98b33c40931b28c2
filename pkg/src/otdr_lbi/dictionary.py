"""Implicit step-function dictionary for OTDR profiles.

The dictionary ``A`` has ``n = p - 1`` rows and ``p`` columns. Column 0 is a
linear ramp scaled by ``sigma`` (the attenuation atom), and column ``j >= 1``
is a step that is zero on samples ``1 .. j-1`` and one on samples ``j .. n``.
Row ``i`` (1-based, matching the sample number) therefore reads::

    a_i = (sigma * i, 1, 1, ..., 1, 0, ..., 0)
                      \\_ i ones _/

Coefficient vectors are plain numpy arrays indexed from 0: ``beta[0]`` is the
scaled slope and ``beta[j]`` the level shift that first appears at sample
``j``. Row numbers stay 1-based everywhere because the row norm
``sigma**2 * i**2 + i`` depends on them.

The solver never builds ``A``; :func:`materialize_columns` exists for the
least-squares refit and as a test oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_SIGMA = 2.0**-10


@dataclass(frozen=True)
class DictionaryShape:
    """Size and slope scaling of the step dictionary.

    Attributes:
        p: number of columns (one slope column plus ``p - 1`` step columns).
        sigma: scale applied to the slope column; must be a positive power of
            two so hardware can replace the multiplication by a shift.
    """

    p: int
    sigma: float = DEFAULT_SIGMA

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 3:
            raise ValueError(f"p must be an integer >= 3, got {self.p!r}")
        if not (self.sigma > 0 and math.frexp(self.sigma)[0] == 0.5):
            raise ValueError(f"sigma must be a positive power of two, got {self.sigma!r}")

    @property
    def n(self) -> int:
        """Number of rows (profile samples)."""
        return self.p - 1

    @classmethod
    def for_samples(cls, n_samples: int, sigma: float = DEFAULT_SIGMA) -> "DictionaryShape":
        return cls(p=n_samples + 1, sigma=sigma)


def _check_row(shape: DictionaryShape, i: int) -> None:
    if not 1 <= i <= shape.n:
        raise IndexError(f"row index {i} outside 1..{shape.n}")


def _check_beta(shape: DictionaryShape, beta: np.ndarray) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (shape.p,):
        raise ValueError(f"coefficient vector must have length {shape.p}, got shape {beta.shape}")
    return beta


def row_inner_product(shape: DictionaryShape, i: int, beta: np.ndarray) -> float:
    """Return ``a_i^T beta = sigma*i*beta[0] + sum(beta[1:i+1])`` for 1-based row ``i``."""
    _check_row(shape, i)
    beta = _check_beta(shape, beta)
    return float(shape.sigma * i * beta[0] + beta[1 : i + 1].sum())


def row_squared_norm(shape: DictionaryShape, i: int) -> float:
    """Return ``||a_i||^2 = sigma**2 * i**2 + i``."""
    _check_row(shape, i)
    return shape.sigma**2 * i * i + i


def row_scales(shape: DictionaryShape) -> np.ndarray:
    """Slope-column entries ``sigma * i`` for every row, i = 1..n."""
    return shape.sigma * np.arange(1, shape.n + 1, dtype=float)


def inverse_row_norms(shape: DictionaryShape) -> np.ndarray:
    """Step-width table ``1 / ||a_i||^2`` for i = 1..n, computed once per solver."""
    i = np.arange(1, shape.n + 1, dtype=float)
    return 1.0 / (shape.sigma**2 * i * i + i)


def apply_dictionary(shape: DictionaryShape, beta: np.ndarray) -> np.ndarray:
    """Compute ``A @ beta`` with one prefix-sum pass (O(p))."""
    beta = _check_beta(shape, beta)
    return row_scales(shape) * beta[0] + np.cumsum(beta[1:])


def column_correlations(shape: DictionaryShape, y: np.ndarray) -> np.ndarray:
    """Compute ``A.T @ y`` in O(n): slope column plus suffix sums for the steps."""
    y = np.asarray(y, dtype=float)
    if y.shape != (shape.n,):
        raise ValueError(f"profile must have length {shape.n}, got shape {y.shape}")
    out = np.empty(shape.p)
    out[0] = np.dot(row_scales(shape), y)
    out[1:] = np.cumsum(y[::-1])[::-1]
    return out


def column_squared_norms(shape: DictionaryShape) -> np.ndarray:
    """Squared column norms: ``sigma**2 * sum(i**2)`` for the slope, ``n - j + 1`` for step ``j``."""
    n = shape.n
    out = np.empty(shape.p)
    out[0] = shape.sigma**2 * n * (n + 1) * (2 * n + 1) / 6.0
    out[1:] = np.arange(n, 0, -1, dtype=float)
    return out


def materialize_columns(shape: DictionaryShape, indices) -> np.ndarray:
    """Build the dense ``n x len(indices)`` sub-matrix of ``A``.

    ``indices`` are 0-based column numbers in strictly ascending order.
    """
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx[0] < 0 or idx[-1] >= shape.p):
        raise IndexError(f"column indices must lie in 0..{shape.p - 1}")
    if np.any(np.diff(idx) <= 0):
        raise ValueError("column indices must be strictly ascending")
    rows = np.arange(1, shape.n + 1)
    cols = (rows[:, None] >= idx[None, :]).astype(float)
    if idx.size and idx[0] == 0:
        cols[:, 0] = shape.sigma * rows
    return cols


def dense_matrix(shape: DictionaryShape) -> np.ndarray:
    """The full ``n x p`` dictionary. Only for tests and small problems."""
    return materialize_columns(shape, np.arange(shape.p))
