"""Fault detection in OTDR profiles with sparse Kaczmarz (linearized Bregman) iterations."""

from .dictionary import DEFAULT_SIGMA, DictionaryShape, apply_dictionary, materialize_columns
from .evaluation import (
    ContingencyTable,
    DerivativeDetector,
    EvaluationReport,
    LBIDetector,
    contingency,
    derivative_baseline,
    fp_distance_histogram,
    metrics,
    run_benchmark,
    squared_error_norm,
)
from .lbi_core import (
    Event,
    EventList,
    LBOTDRResult,
    SolverConfig,
    SolverState,
    event_list_from_beta,
    kaczmarz_step,
    lbotdr,
    least_squares_refit,
    peak_locations,
    shrink,
)
from .model_selection import LambdaSchedule, SelectionResult, bic, hot_start_v, lambda_max_bound, select_model
from .simulator import FiberSpec, NoiseSpec, random_testbench, simulate_profile, synth_clean_profile

__all__ = [
    "DEFAULT_SIGMA",
    "ContingencyTable",
    "DerivativeDetector",
    "DictionaryShape",
    "EvaluationReport",
    "Event",
    "EventList",
    "FiberSpec",
    "LBIDetector",
    "LBOTDRResult",
    "LambdaSchedule",
    "NoiseSpec",
    "SelectionResult",
    "SolverConfig",
    "SolverState",
    "apply_dictionary",
    "bic",
    "contingency",
    "derivative_baseline",
    "event_list_from_beta",
    "fp_distance_histogram",
    "hot_start_v",
    "kaczmarz_step",
    "lambda_max_bound",
    "lbotdr",
    "least_squares_refit",
    "materialize_columns",
    "metrics",
    "peak_locations",
    "random_testbench",
    "run_benchmark",
    "select_model",
    "shrink",
    "simulate_profile",
    "squared_error_norm",
    "synth_clean_profile",
]
