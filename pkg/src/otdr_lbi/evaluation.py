"""Scoring detectors against ground truth, the derivative baseline, and the benchmark runner."""

from __future__ import annotations

import itertools
import logging
import math
import time
from collections import defaultdict
from collections.abc import Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .dictionary import DEFAULT_SIGMA
from .lbi_core import EventList, SolverConfig, event_list_from_beta, lbotdr
from .model_selection import DEFAULT_GRID_SIZE, LambdaSchedule, select_model
from .simulator import SimulatedProfile

log = logging.getLogger(__name__)

FP_BIN_WIDTH = 50
DEFAULT_DERIVATIVE_THRESHOLD_DB = 0.5


def _pair(beta_true, beta_hat):
    a = np.asarray(beta_true, dtype=float)
    b = np.asarray(beta_hat, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"coefficient vectors differ in shape: {a.shape} vs {b.shape}")
    if a.size < 2:
        raise ValueError("coefficient vectors need a slope and at least one step entry")
    return a, b


@dataclass(frozen=True)
class ContingencyTable:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("contingency counts must be non-negative")

    def __add__(self, other: "ContingencyTable") -> "ContingencyTable":
        return ContingencyTable(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def contingency(beta_true, beta_hat, tolerance: int = 0) -> ContingencyTable:
    """Classify every step index (all but the slope entry) as TP, FP, TN or FN.

    With the default ``tolerance=0`` a detection only counts when it sits on
    exactly the true index. A positive ``tolerance`` greedily pairs each
    detection with the nearest unmatched true fault at most that many samples
    away; unpaired detections are false positives.
    """
    a, b = _pair(beta_true, beta_hat)
    truth = np.flatnonzero(a[1:]) + 1
    found = np.flatnonzero(b[1:]) + 1
    n_positions = a.size - 1
    if tolerance < 0:
        raise ValueError("tolerance must be >= 0")
    if tolerance == 0:
        tp = np.intersect1d(truth, found).size
    else:
        free = set(truth.tolist())
        tp = 0
        for j in found.tolist():
            near = [t for t in free if abs(t - j) <= tolerance]
            if near:
                free.remove(min(near, key=lambda t: (abs(t - j), t)))
                tp += 1
    fp = found.size - tp
    fn = truth.size - tp
    return ContingencyTable(tp, fp, n_positions - tp - fp - fn, fn)


@dataclass(frozen=True)
class Metrics:
    """Rates derived from a contingency table; ``None`` where the denominator is zero."""

    sensitivity: float | None
    specificity: float | None
    accuracy: float | None
    precision: float | None


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def metrics(t: ContingencyTable) -> Metrics:
    return Metrics(
        sensitivity=_ratio(t.tp, t.tp + t.fn),
        specificity=_ratio(t.tn, t.tn + t.fp),
        accuracy=_ratio(t.tp + t.tn, t.total),
        precision=_ratio(t.tp, t.tp + t.fp),
    )


def squared_error_norm(beta_true, beta_hat, sigma: float = DEFAULT_SIGMA) -> float:
    """``||beta - beta_hat||^2`` with the slope entry converted to dB per sample on both sides."""
    a, b = _pair(beta_true, beta_hat)
    d = a - b
    d[0] *= sigma
    return float(np.dot(d, d))


def fp_distances(beta_true, beta_hat) -> np.ndarray:
    """Distance from each false-positive index to the nearest true fault index."""
    a, b = _pair(beta_true, beta_hat)
    truth = np.flatnonzero(a[1:]) + 1
    found = np.flatnonzero(b[1:]) + 1
    fps = np.setdiff1d(found, truth)
    if fps.size == 0:
        return np.zeros(0, dtype=np.int64)
    if truth.size == 0:
        raise ValueError("false-positive distances need at least one true fault")
    return np.abs(fps[:, None] - truth[None, :]).min(axis=1)


@dataclass
class FPHistogram:
    """Counts of false-positive distances; bin ``k`` covers ``[k*w, (k+1)*w)`` samples.

    ``unreferenced`` counts false positives on profiles without any true
    fault, for which no distance exists.
    """

    bin_width: int = FP_BIN_WIDTH
    counts: list[int] = field(default_factory=list)
    unreferenced: int = 0

    def add(self, distances, unreferenced: int = 0) -> None:
        bins = np.asarray(distances, dtype=np.int64) // self.bin_width
        if bins.size:
            need = int(bins.max()) + 1
            if need > len(self.counts):
                self.counts.extend([0] * (need - len(self.counts)))
            for k, c in zip(*np.unique(bins, return_counts=True)):
                self.counts[int(k)] += int(c)
        self.unreferenced += unreferenced

    def merge(self, other: "FPHistogram") -> None:
        if other.bin_width != self.bin_width:
            raise ValueError("cannot merge histograms with different bin widths")
        if len(other.counts) > len(self.counts):
            self.counts.extend([0] * (len(other.counts) - len(self.counts)))
        for k, c in enumerate(other.counts):
            self.counts[k] += c
        self.unreferenced += other.unreferenced

    @property
    def total(self) -> int:
        return sum(self.counts)

    def first_bin_fraction(self) -> float | None:
        return self.counts[0] / self.total if self.total else None

    def edges(self) -> list[int]:
        return [k * self.bin_width for k in range(len(self.counts) + 1)]


def fp_distance_histogram(beta_true, beta_hat, bin_width: int = FP_BIN_WIDTH) -> FPHistogram:
    if bin_width < 1:
        raise ValueError("bin_width must be >= 1")
    hist = FPHistogram(bin_width)
    hist.add(fp_distances(beta_true, beta_hat))
    return hist


# ---------------------------------------------------------------------------
# detectors


def derivative_baseline(
    y,
    threshold_db: float = DEFAULT_DERIVATIVE_THRESHOLD_DB,
    sigma: float = DEFAULT_SIGMA,
    sample_spacing_m: float = 1.0,
) -> tuple[EventList, np.ndarray]:
    """First-difference peak picker.

    ``d_i = y_{i+1} - y_i`` is flagged when ``|d_i| > threshold_db`` and
    ``|d_i|`` is a local maximum (ties go to the leftmost sample). The flagged
    difference is the event loss, placed at the later of the two samples. The
    slope is the median of the unflagged differences. Returns the event list
    and the matching coefficient vector in dictionary units.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size < 2:
        raise ValueError("profile must be a 1-D array with at least 2 samples")
    d = np.diff(y)
    mag = np.abs(d)
    left = np.concatenate(([0.0], mag[:-1]))
    right = np.concatenate((mag[1:], [0.0]))
    flagged = (mag > threshold_db) & (mag >= left) & (mag > right)
    rest = d[~flagged]
    slope = float(np.median(rest)) if rest.size else 0.0

    beta = np.zeros(y.size + 1)
    beta[0] = slope / sigma
    beta[np.flatnonzero(flagged) + 2] = d[flagged]
    return event_list_from_beta(beta, sigma, sample_spacing_m), beta


@dataclass
class Detection:
    beta_hat: np.ndarray
    lambda_best: float | None = None
    iterations: int | None = None
    converged: bool | None = None


@dataclass(frozen=True)
class LBIDetector:
    """LBOTDR with (default) or without the lambda search.

    ``max_sweeps`` sets the budget in full sweeps so it scales with the
    profile length; ``None`` keeps ``config.n_max``.
    """

    config: SolverConfig = SolverConfig()
    lambda_grid: bool = True
    grid_size: int = DEFAULT_GRID_SIZE
    max_sweeps: int | None = None

    @property
    def name(self) -> str:
        return "lbi" if self.lambda_grid else "lbi-first"

    def __call__(self, y, sigma: float) -> Detection:
        config = replace(self.config, sigma=sigma)
        if self.max_sweeps is not None:
            config = replace(config, n_max=self.max_sweeps * len(y))
        if self.lambda_grid:
            sel = select_model(y, config, LambdaSchedule.for_profile(y, sigma, self.grid_size))
            return Detection(sel.beta_best, sel.lambda_best, sel.total_iterations, sel.first.converged)
        res = lbotdr(y, config)
        return Detection(res.beta_hat, res.lam, res.iterations, res.converged)


@dataclass(frozen=True)
class DerivativeDetector:
    threshold_db: float = DEFAULT_DERIVATIVE_THRESHOLD_DB
    name: str = "derivative"

    def __call__(self, y, sigma: float) -> Detection:
        _, beta = derivative_baseline(y, self.threshold_db, sigma)
        return Detection(beta)


# ---------------------------------------------------------------------------
# benchmark


@dataclass
class ProfileRecord:
    detector: str
    length: int
    replicate: int
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    squared_error: float = math.nan
    lambda_best: float | None = None
    iterations: int | None = None
    converged: bool | None = None
    seconds: float = 0.0
    error: str | None = None
    fp_distances: list[int] = field(default_factory=list, repr=False)
    n_true: int = 0

    @property
    def table(self) -> ContingencyTable:
        return ContingencyTable(self.tp, self.fp, self.tn, self.fn)


@dataclass
class GroupSummary:
    """Aggregate over all profiles of one length for one detector."""

    detector: str
    length: int
    profiles: int
    failures: int
    table: ContingencyTable
    mean_squared_error: float | None
    mean_seconds: float
    histogram: FPHistogram

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "detector": self.detector,
            "length": self.length,
            "profiles": self.profiles,
            "failures": self.failures,
            "contingency": asdict(self.table),
            "metrics": asdict(metrics(self.table)),
            "mean_squared_error": self.mean_squared_error,
            "fp_histogram": {
                "bin_width": self.histogram.bin_width,
                "counts": list(self.histogram.counts),
                "unreferenced": self.histogram.unreferenced,
            },
        }
        if include_timing:
            out["mean_seconds"] = self.mean_seconds
        return out


def _summarize(detector: str, length: int, records: list[ProfileRecord]) -> GroupSummary:
    ok = [r for r in records if r.error is None]
    table = sum((r.table for r in ok), ContingencyTable())
    hist = FPHistogram()
    for r in ok:
        if r.n_true:
            hist.add(r.fp_distances)
        else:
            hist.add([], unreferenced=r.fp)
    errs = [r.squared_error for r in ok]
    return GroupSummary(
        detector=detector,
        length=length,
        profiles=len(records),
        failures=len(records) - len(ok),
        table=table,
        mean_squared_error=float(np.mean(errs)) if errs else None,
        mean_seconds=float(np.mean([r.seconds for r in ok])) if ok else 0.0,
        histogram=hist,
    )


@dataclass
class EvaluationReport:
    records: list[ProfileRecord]

    def detectors(self) -> list[str]:
        return list(dict.fromkeys(r.detector for r in self.records))

    def lengths(self) -> list[int]:
        return sorted({r.length for r in self.records})

    def summaries(self) -> list[GroupSummary]:
        groups: dict[tuple[str, int], list[ProfileRecord]] = defaultdict(list)
        for r in self.records:
            groups[r.detector, r.length].append(r)
        order = {name: k for k, name in enumerate(self.detectors())}
        keys = sorted(groups, key=lambda key: (order[key[0]], key[1]))
        return [_summarize(det, length, groups[det, length]) for det, length in keys]

    def overall(self, detector: str) -> GroupSummary:
        mine = [r for r in self.records if r.detector == detector]
        if not mine:
            raise KeyError(detector)
        return _summarize(detector, 0, mine)

    def by_profile(self, detector: str) -> dict[tuple[int, int], ProfileRecord]:
        return {(r.length, r.replicate): r for r in self.records if r.detector == detector}

    def to_dict(self, include_timing: bool = True) -> dict:
        def record(r: ProfileRecord) -> dict:
            d = asdict(r)
            if not include_timing:
                d.pop("seconds")
            return d

        return {
            "format": "otdr-report/1",
            "detectors": self.detectors(),
            "summaries": [s.to_dict(include_timing) for s in self.summaries()],
            "overall": [self.overall(d).to_dict(include_timing) for d in self.detectors()],
            "profiles": [record(r) for r in self.records],
        }


def evaluate_profile(profile: SimulatedProfile, detectors: Sequence) -> list[ProfileRecord]:
    """Run every detector on one profile; failures are recorded, not raised."""
    out = []
    n_true = int(np.count_nonzero(profile.beta[1:]))
    for det in detectors:
        rec = ProfileRecord(det.name, profile.length, profile.replicate, n_true=n_true)
        start = time.perf_counter()
        try:
            found = det(profile.y, profile.sigma)
        except Exception as exc:  # noqa: BLE001 - one bad profile must not end the run
            rec.seconds = time.perf_counter() - start
            rec.error = f"{type(exc).__name__}: {exc}"
            log.warning("%s failed on length=%d replicate=%d: %s", det.name, profile.length, profile.replicate, exc)
            out.append(rec)
            continue
        rec.seconds = time.perf_counter() - start
        t = contingency(profile.beta, found.beta_hat)
        rec.tp, rec.fp, rec.tn, rec.fn = t.tp, t.fp, t.tn, t.fn
        rec.squared_error = squared_error_norm(profile.beta, found.beta_hat, profile.sigma)
        rec.lambda_best, rec.iterations, rec.converged = found.lambda_best, found.iterations, found.converged
        if n_true:
            rec.fp_distances = fp_distances(profile.beta, found.beta_hat).tolist()
        out.append(rec)
    return out


def run_benchmark(
    profiles: Iterable[SimulatedProfile],
    detectors: Sequence,
    workers: int = 1,
) -> EvaluationReport:
    """Run all detectors on the same profiles and collect per-profile records.

    With ``workers > 1`` profiles are spread over a process pool; records
    come back in input order, so the report does not depend on scheduling.
    """
    detectors = list(detectors)
    if not detectors:
        raise ValueError("at least one detector is required")
    names = [d.name for d in detectors]
    if len(set(names)) != len(names):
        raise ValueError(f"detector names must be unique: {names}")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    records: list[ProfileRecord] = []
    if workers == 1:
        for prof in profiles:
            records.extend(evaluate_profile(prof, detectors))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for chunk in pool.map(evaluate_profile, profiles, itertools.repeat(detectors)):
                records.extend(chunk)
    return EvaluationReport(records)
