"""
covhmm - Covariate-conditioned hidden Markov models for post-operative complication risk
Two class-specific HMMs over binned temperature sequences, combined by Bayes' rule.
"""

from .classifier import ClassifierPair, RiskScoreSeries, RiskStream, classify, decide, posterior, risk_series
from .covariate_link import CovariateVector, LogitBlock, Standardization, fit_weighted_multinomial_logit
from .errors import (
    CovHmmError,
    DataQualityError,
    DegenerateLikelihoodError,
    DimensionMismatchError,
    EmptySequenceError,
    NonFiniteObjectiveError,
    SchemaError,
    SingleClassError,
    UndefinedMetricError,
)
from .evaluation import ConfusionCounts, FoldPlan, MetricsReport, cross_validate, early_curve, state_prevalence
from .hmm_core import (
    EmissionParams,
    ObservedSequence,
    StateDistribution,
    TransitionMatrix,
    forward_backward,
    sequence_log_likelihood,
    viterbi,
)
from .records import Label, PatientSequence, read_dataset, write_dataset
from .synthgen import GeneratorSpec, generate
from .training import HmmParams, TrainConfig, TrainReport, fit

__all__ = [
    "ClassifierPair",
    "ConfusionCounts",
    "CovHmmError",
    "CovariateVector",
    "DataQualityError",
    "DegenerateLikelihoodError",
    "DimensionMismatchError",
    "EmissionParams",
    "EmptySequenceError",
    "FoldPlan",
    "GeneratorSpec",
    "HmmParams",
    "Label",
    "LogitBlock",
    "MetricsReport",
    "NonFiniteObjectiveError",
    "ObservedSequence",
    "PatientSequence",
    "RiskScoreSeries",
    "RiskStream",
    "SchemaError",
    "SingleClassError",
    "Standardization",
    "StateDistribution",
    "TrainConfig",
    "TrainReport",
    "TransitionMatrix",
    "UndefinedMetricError",
    "classify",
    "cross_validate",
    "decide",
    "early_curve",
    "fit",
    "fit_weighted_multinomial_logit",
    "forward_backward",
    "generate",
    "posterior",
    "read_dataset",
    "risk_series",
    "sequence_log_likelihood",
    "state_prevalence",
    "viterbi",
    "write_dataset",
]
