"""Lambda grid search with hot-starting and BIC model choice."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dictionary import DictionaryShape, apply_dictionary, column_correlations, column_squared_norms
from .lbi_core import DEFAULT_LAMBDA, LBOTDRResult, SolverConfig, lbotdr

log = logging.getLogger(__name__)

DEFAULT_GRID_SIZE = 8


def lambda_max_bound(y, shape: DictionaryShape) -> float:
    """Largest normalized column correlation ``max_j |a_j^T y| / ||a_j||^2``."""
    corr = column_correlations(shape, y)
    return float(np.max(np.abs(corr) / column_squared_norms(shape)))


@dataclass(frozen=True)
class LambdaSchedule:
    """Strictly ascending lambda values starting at 0.5."""

    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(x) for x in self.values)
        object.__setattr__(self, "values", vals)
        if not vals or vals[0] != DEFAULT_LAMBDA:
            raise ValueError(f"schedule must start at {DEFAULT_LAMBDA}")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("schedule must be strictly ascending")

    @classmethod
    def log_grid(cls, lambda_max: float, size: int = DEFAULT_GRID_SIZE) -> "LambdaSchedule":
        """``size`` log-spaced values from 0.5 to ``lambda_max`` (only 0.5 if ``lambda_max <= 0.5``)."""
        if size < 1:
            raise ValueError("grid size must be >= 1")
        if size == 1 or not lambda_max > DEFAULT_LAMBDA:
            return cls((DEFAULT_LAMBDA,))
        vals = np.geomspace(DEFAULT_LAMBDA, lambda_max, size)
        vals[0] = DEFAULT_LAMBDA
        return cls(tuple(vals))

    @classmethod
    def for_profile(cls, y, sigma: float, size: int = DEFAULT_GRID_SIZE) -> "LambdaSchedule":
        shape = DictionaryShape.for_samples(len(y), sigma)
        return cls.log_grid(lambda_max_bound(y, shape), size)

    def __len__(self):
        return len(self.values)


def hot_start_v(beta, lam: float) -> np.ndarray:
    """Dual vector for a new lambda: ``v_j = (|beta_j| + lam) * sign(beta_j)``."""
    if lam < 0:
        raise ValueError("lam must be non-negative")
    beta = np.asarray(beta, dtype=float)
    return (np.abs(beta) + lam) * np.sign(beta)


def bic(y, beta_hat, shape: DictionaryShape) -> float:
    """``||beta_hat||_0 * log(p) + p * log(||y - A beta_hat||^2 / p)``.

    A perfect fit returns ``-inf``.
    """
    y = np.asarray(y, dtype=float)
    beta_hat = np.asarray(beta_hat, dtype=float)
    rss = float(np.sum((y - apply_dictionary(shape, beta_hat)) ** 2))
    k = np.count_nonzero(beta_hat)
    if rss == 0.0:
        return -math.inf
    return k * math.log(shape.p) + shape.p * math.log(rss / shape.p)


@dataclass
class Candidate:
    lam: float
    bic: float
    iterations: int
    converged: bool = False
    error: str | None = None


@dataclass
class SelectionResult:
    """Outcome of the lambda search. ``bic_trace`` lists every lambda tried."""

    beta_first: np.ndarray
    beta_best: np.ndarray
    lambda_best: float
    bic_best: float
    n_c: int
    bic_trace: list[Candidate] = field(default_factory=list)
    first: LBOTDRResult | None = field(default=None, repr=False)

    @property
    def total_iterations(self) -> int:
        return sum(c.iterations for c in self.bic_trace)


def select_model(
    y,
    config: SolverConfig = SolverConfig(),
    schedule: LambdaSchedule | None = None,
) -> SelectionResult:
    """Run LBOTDR at lambda = 0.5, then hot-started runs over the rest of ``schedule``.

    Every run after the first gets ``ceil(0.1 * N_c)`` iterations, ``N_c``
    being what the first run used. The hot-start chain passes the dense
    solver beta from one lambda to the next. Ties in BIC keep the smaller
    lambda.
    """
    y = np.asarray(y, dtype=float)
    if schedule is None:
        schedule = LambdaSchedule.for_profile(y, config.sigma)
    first_cfg = replace(config, lam=schedule.values[0])
    first = lbotdr(y, first_cfg)
    shape = first.shape
    n_c = first.iterations
    best_bic = bic(y, first.beta_hat, shape)
    trace = [Candidate(first.lam, best_bic, n_c, first.converged)]
    best_beta, best_lam = first.beta_hat, first.lam

    follow_budget = max(1, math.ceil(0.1 * n_c))
    beta = first.beta
    for lam in schedule.values[1:]:
        try:
            res = lbotdr(
                y,
                replace(config, lam=lam),
                beta_start=beta,
                v_start=hot_start_v(beta, lam),
                n_iter=follow_budget,
            )
        except (ValueError, np.linalg.LinAlgError) as exc:
            log.warning("lambda=%g skipped: %s", lam, exc)
            trace.append(Candidate(lam, math.nan, 0, False, str(exc)))
            continue
        score = bic(y, res.beta_hat, shape)
        trace.append(Candidate(lam, score, res.iterations, res.converged))
        if score < best_bic:
            best_bic, best_beta, best_lam = score, res.beta_hat, lam
        beta = res.beta

    return SelectionResult(
        beta_first=first.beta_hat,
        beta_best=best_beta,
        lambda_best=best_lam,
        bic_best=best_bic,
        n_c=n_c,
        bic_trace=trace,
        first=first,
    )
