"""Linearized Bregman sparse Kaczmarz solver for step dictionaries.

The fast path (:func:`lbotdr`) runs whole sweeps in compiled code. The
single-row :func:`kaczmarz_step` is a plain-Python reference of the same
update; it is slower but can count its arithmetic and is used to check the
compiled kernel.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field

import numpy as np

from ._kernels import kaczmarz_sweeps
from .dictionary import (
    DEFAULT_SIGMA,
    DictionaryShape,
    apply_dictionary,
    inverse_row_norms,
    row_scales,
)

log = logging.getLogger(__name__)

DEFAULT_LAMBDA = 0.5
DEFAULT_EPSILON_MIN = 0.125
DEFAULT_MAX_SWEEPS = 1000


def shrink(v, lam):
    """Soft threshold ``max(|v| - lam, 0) * sign(v)``; works on scalars and arrays."""
    if lam < 0:
        raise ValueError("lam must be non-negative")
    out = np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of one LBOTDR run.

    ``n_max`` is the iteration budget in row updates; ``None`` means
    ``DEFAULT_MAX_SWEEPS`` full sweeps. ``t_p`` defaults to ``epsilon_min``.
    """

    lam: float = DEFAULT_LAMBDA
    sigma: float = DEFAULT_SIGMA
    epsilon_min: float = DEFAULT_EPSILON_MIN
    n_max: int | None = None
    t_p: float | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if not self.epsilon_min > 0:
            raise ValueError("epsilon_min must be > 0")
        if self.t_p is not None and self.t_p < 0:
            raise ValueError("t_p must be >= 0")
        if self.n_max is not None and self.n_max < 1:
            raise ValueError("n_max must be positive")
        DictionaryShape(3, self.sigma)  # validates sigma

    @property
    def peak_threshold(self) -> float:
        return self.epsilon_min if self.t_p is None else self.t_p

    def budget(self, n: int) -> int:
        if self.n_max is None:
            return DEFAULT_MAX_SWEEPS * n
        if self.n_max < n:
            raise ValueError(f"n_max={self.n_max} is smaller than one sweep ({n} rows)")
        return self.n_max


@dataclass
class SolverState:
    """Mutable Kaczmarz state. ``k`` counts row updates done so far."""

    beta: np.ndarray
    v: np.ndarray
    lam: float
    k: int = 0
    sweep_abs_residual: float = 0.0

    @classmethod
    def cold(cls, p: int, lam: float) -> "SolverState":
        return cls(beta=np.zeros(p), v=np.zeros(p), lam=lam)


@dataclass
class OpCounter:
    """Arithmetic tally kept by :func:`kaczmarz_step` when passed in."""

    multiplications: int = 0
    additions: int = 0
    steps: int = 0

    @property
    def mults_per_step(self) -> float:
        return self.multiplications / self.steps if self.steps else 0.0

    @property
    def adds_per_step(self) -> float:
        return self.additions / self.steps if self.steps else 0.0


@functools.lru_cache(maxsize=8)
def _row_tables(shape: DictionaryShape) -> tuple[np.ndarray, np.ndarray]:
    return row_scales(shape), inverse_row_norms(shape)


def kaczmarz_step(
    state: SolverState,
    shape: DictionaryShape,
    y: np.ndarray,
    counter: OpCounter | None = None,
) -> SolverState:
    """One sparse Kaczmarz row update, in place; returns ``state``.

    Row ``i = (k mod n) + 1`` is used. Only ``v[0..i]`` and ``beta[0..i]``
    change. The absolute residual is added to ``state.sweep_abs_residual``.
    """
    n = shape.n
    i = state.k % n + 1
    beta, v, lam = state.beta, state.v, state.lam
    scales, inv_norms = _row_tables(shape)
    s_i = scales[i - 1]
    lo = -lam
    ops_mul = ops_add = 0

    inner = s_i * beta[0]
    ops_mul += 1
    for c in range(1, i + 1):
        inner += beta[c]
    ops_add += i
    r = y[i - 1] - inner
    ops_add += 1
    w = r * inv_norms[i - 1]
    ops_mul += 1
    v[0] += s_i * w
    ops_mul += 1
    ops_add += 1
    for c in range(1, i + 1):
        v[c] += w
    ops_add += i
    for c in range(0, i + 1):
        # shrink(v) = v - clip(v, -lam, lam): one subtraction, the rest are comparisons
        beta[c] = v[c] - max(min(v[c], lam), lo)
    ops_add += i + 1

    state.sweep_abs_residual += abs(r)
    state.k += 1
    if counter is not None:
        counter.multiplications += ops_mul
        counter.additions += ops_add + 1  # running residual sum
        counter.steps += 1
    return state


def stopping_criterion(residuals, epsilon_min: float) -> bool:
    """True when the mean absolute residual over one sweep is below ``epsilon_min``."""
    residuals = np.asarray(residuals, dtype=float)
    return bool(np.mean(np.abs(residuals)) < epsilon_min)


def peak_locations(beta: np.ndarray, t_p: float) -> np.ndarray:
    """Indices of local extrema of ``beta`` with ``|beta_j| >= t_p``, plus the slope index 0.

    A position ``j`` in ``1 .. p-1`` is a peak when the sign of the forward
    difference differs from the sign of the backward difference. The
    coefficient past the last column is taken as zero, so a step at the very
    last sample can still be found.
    """
    beta = np.asarray(beta, dtype=float)
    if beta.size < 3:
        raise ValueError("peak detection needs at least 3 coefficients")
    d = np.sign(np.diff(beta, append=0.0))
    j = np.flatnonzero(d[1:] != d[:-1]) + 1
    j = j[np.abs(beta[j]) >= t_p]
    return np.union1d(np.array([0], dtype=np.int64), j.astype(np.int64))


def merge_adjacent(indices: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Collapse runs of consecutive step indices to the one with the largest ``|beta|``."""
    out: list[int] = []
    prev = None
    for j in np.asarray(indices, dtype=np.int64).tolist():
        if prev is not None and prev != 0 and j == prev + 1:
            if abs(beta[j]) > abs(beta[out[-1]]):
                out[-1] = j
        else:
            out.append(j)
        prev = j
    return np.array(out, dtype=np.int64)


def least_squares_refit(y: np.ndarray, shape: DictionaryShape, indices) -> np.ndarray:
    """Least-squares coefficients on the columns ``indices``; zero elsewhere.

    The selected step columns cut the profile into segments of constant level
    sharing one slope, so the normal equations decouple: the slope comes from
    the within-segment covariance, each level from its segment mean, and the
    step heights are differences of consecutive levels. This costs O(n) and
    equals the dense solution on ``materialize_columns(shape, indices)``.

    Any strictly ascending set of at most ``n`` columns has full rank (the
    ramp lies in the span of the steps only when all ``n`` steps are
    present), so the solution is unique; repeated indices are rejected.
    """
    y = np.asarray(y, dtype=float)
    n = shape.n
    if y.shape != (n,):
        raise ValueError(f"profile must have length {n}")
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        return np.zeros(shape.p)
    if idx[0] < 0 or idx[-1] >= shape.p or np.any(np.diff(idx) <= 0):
        raise ValueError("indices must be strictly ascending within 0..p-1")
    if idx.size > n:
        raise ValueError("more columns than samples")

    with_slope = idx[0] == 0
    steps = idx[1:] if with_slope else idx
    x = row_scales(shape)
    # segment k covers rows steps[k-1] .. steps[k]-1 (1-based); segment 0 has level 0
    bounds = np.concatenate(([1], steps, [n + 1]))
    lengths = np.diff(bounds)
    seg = np.repeat(np.arange(lengths.size), lengths)
    nonempty = lengths > 0
    starts = (bounds[:-1] - 1)[nonempty]
    free = np.ones(lengths.size, dtype=bool)
    free[0] = False  # rows before the first step have level 0

    def seg_sum(values):
        out = np.zeros(lengths.size)
        out[nonempty] = np.add.reduceat(values, starts)
        return out

    safe_len = np.where(lengths > 0, lengths, 1)
    ybar = np.where(free, seg_sum(y) / safe_len, 0.0)
    xbar = np.where(free, seg_sum(x) / safe_len, 0.0)

    slope = 0.0
    if with_slope:
        xc = x - xbar[seg]
        yc = y - ybar[seg]
        den = float(np.dot(xc, xc))
        slope = float(np.dot(xc, yc)) / den

    levels = np.where(free, ybar - slope * xbar, 0.0)
    out = np.zeros(shape.p)
    if with_slope:
        out[0] = slope
    out[steps] = np.diff(levels)
    return out


@dataclass
class LBOTDRResult:
    """Output of one LBOTDR run.

    ``beta_hat`` is the refit coefficient vector in dictionary units (so
    ``apply_dictionary(shape, beta_hat)`` is the fitted profile); the dense
    solver state ``beta``/``v`` is kept for hot-starting.
    """

    beta_hat: np.ndarray
    beta: np.ndarray
    v: np.ndarray
    iterations: int
    converged: bool
    mean_abs_residual: float
    lam: float
    support: np.ndarray = field(repr=False)
    shape: DictionaryShape = field(repr=False)

    @property
    def budget_exhausted(self) -> bool:
        return not self.converged


def _as_profile(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size < 2:
        raise ValueError("profile must be a 1-D array with at least 2 samples")
    if not np.all(np.isfinite(y)):
        raise ValueError("profile contains non-finite samples")
    return y


def lbotdr(
    y,
    config: SolverConfig = SolverConfig(),
    beta_start: np.ndarray | None = None,
    v_start: np.ndarray | None = None,
    n_iter: int | None = None,
) -> LBOTDRResult:
    """Sparse Kaczmarz iterations, peak location and least-squares refit.

    Args:
        y: profile in dB, one value per sample.
        config: solver parameters.
        beta_start, v_start: hot-start state. Only ``v`` drives the
            iteration (beta is recomputed as ``shrink(v)`` before every row),
            so ``beta_start`` is accepted for symmetry and otherwise ignored.
        n_iter: iteration budget; defaults to ``config.budget(n)``.
    """
    y = _as_profile(y)
    shape = DictionaryShape.for_samples(y.size, config.sigma)
    budget = config.budget(shape.n) if n_iter is None else int(n_iter)
    if budget < 1:
        raise ValueError("iteration budget must be positive")
    v = np.zeros(shape.p) if v_start is None else np.array(v_start, dtype=float)
    if v.shape != (shape.p,):
        raise ValueError(f"v_start must have length {shape.p}")
    del beta_start

    k, resid, converged = kaczmarz_sweeps(
        y, v, inverse_row_norms(shape), row_scales(shape), float(config.lam), 0, budget, config.epsilon_min
    )
    if not converged:
        log.debug("budget of %d iterations exhausted (mean |r| = %.4g dB)", budget, resid)
    beta = shrink(v, config.lam)

    compensated = beta.copy()
    compensated[0] *= shape.sigma
    support = merge_adjacent(peak_locations(compensated, config.peak_threshold), compensated)
    beta_hat = least_squares_refit(y, shape, support)
    small = np.abs(beta_hat) < config.epsilon_min
    small[0] = False
    beta_hat[small] = 0.0
    return LBOTDRResult(
        beta_hat=beta_hat,
        beta=beta,
        v=v,
        iterations=int(k),
        converged=bool(converged),
        mean_abs_residual=float(resid),
        lam=float(config.lam),
        support=support,
        shape=shape,
    )


# ---------------------------------------------------------------------------
# event lists


@dataclass(frozen=True)
class Event:
    position_index: int
    position_m: float
    loss_db: float


@dataclass
class EventList:
    """Detected level shifts, losses reported as positive dB.

    ``offset_db`` is the coefficient of the all-ones column (a level shift at
    the very first sample), which reflects the trace's starting level rather
    than a fault, so it is not listed as an event.
    """

    events: list[Event]
    slope_db_per_sample: float
    sample_spacing_m: float = 1.0
    offset_db: float = 0.0

    @property
    def slope_db_per_km(self) -> float:
        return self.slope_db_per_sample / self.sample_spacing_m * 1000.0

    def positions(self) -> np.ndarray:
        return np.array([e.position_index for e in self.events], dtype=np.int64)

    def losses(self) -> np.ndarray:
        return np.array([e.loss_db for e in self.events])

    def __len__(self):
        return len(self.events)


def event_list_from_beta(beta_hat: np.ndarray, sigma: float, sample_spacing_m: float = 1.0) -> EventList:
    """Turn a sparse coefficient vector (dictionary units) into an :class:`EventList`."""
    beta_hat = np.asarray(beta_hat, dtype=float)
    events = [
        Event(int(j), float(j * sample_spacing_m), float(-beta_hat[j]))
        for j in np.flatnonzero(beta_hat[2:]) + 2
    ]
    return EventList(
        events=events,
        slope_db_per_sample=float(beta_hat[0] * sigma),
        sample_spacing_m=sample_spacing_m,
        offset_db=float(beta_hat[1]),
    )


def fitted_profile(beta_hat: np.ndarray, sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """``A @ beta_hat`` for a coefficient vector of length ``n + 1``."""
    return apply_dictionary(DictionaryShape(len(beta_hat), sigma), beta_hat)
