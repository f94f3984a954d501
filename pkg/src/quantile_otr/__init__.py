"""Quantile-optimal treatment regimes by sequential weighted classification."""

__version__ = "0.1.0"

from .classifier import FitDiagnostics, SolverConfig, cross_validate, solve_weighted_hinge
from .contrast import WeightedLabel, WeightedLabels, psi, psi_smoothed, weighted_labels
from .core import (Dataset, DecisionFunction, KernelKind, KernelSpec, ObservationRecord, OutcomeKind, Regime,
                   decision_eval, kernel_eval, read_dataset_csv, write_dataset_csv)
from .dtr import DtrResult, TwoStageData, TwoStageRecord, dtr_fit, dtr_smoothed_survival, dtr_surrogate_fit
from .errors import ConfigError, ConvergenceError, DataError, EstimatorError, QotrError, SeparationError
from .evaluation import BandwidthSpec, ipw_checkloss_quantile, smoothed_survival_estimate
from .nuisance import NuisanceModels, fit_gaussian_survival, fit_negbin_survival, fit_nuisances, fit_propensity
from .oracle import OracleInstance, enumerate_optima, exact_survival, numeric_qstar
from .search import SclResult, SearchConfig, default_search_config, scl_fit
from .simulation import EvaluationReport, SimCaseSpec, evaluate_regime, generate, true_regime
from .smoothing import DiscreteSurvival, smoothed_quantile, smoothed_survival

__all__ = [
    "BandwidthSpec", "ConfigError", "ConvergenceError", "DataError", "Dataset", "DecisionFunction",
    "DiscreteSurvival", "DtrResult", "EstimatorError", "EvaluationReport", "FitDiagnostics", "KernelKind",
    "KernelSpec", "NuisanceModels", "ObservationRecord", "OracleInstance", "OutcomeKind", "QotrError", "Regime",
    "SclResult", "SearchConfig", "SeparationError", "SimCaseSpec", "SolverConfig", "TwoStageData",
    "TwoStageRecord", "WeightedLabel", "WeightedLabels", "cross_validate", "decision_eval",
    "default_search_config", "dtr_fit", "dtr_smoothed_survival", "dtr_surrogate_fit", "enumerate_optima",
    "evaluate_regime", "exact_survival", "fit_gaussian_survival", "fit_negbin_survival", "fit_nuisances",
    "fit_propensity", "generate", "ipw_checkloss_quantile", "kernel_eval", "numeric_qstar", "psi",
    "psi_smoothed", "read_dataset_csv", "scl_fit", "smoothed_quantile", "smoothed_survival",
    "smoothed_survival_estimate", "solve_weighted_hinge", "true_regime", "weighted_labels", "write_dataset_csv",
]
