"""
Classifier - Two-model Bayesian sequence classifier and real-time risk score
P(C | O) = P(O | lambda_C) P(C) / (P(O | lambda_C) P(C) + P(O | lambda_NC) P(NC)),
evaluated in log space so neither likelihood has to be representable.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .covariate_link import CovariateVector
from .hmm_core import ForwardFilter, ObservedSequence, sequence_log_likelihood
from .records import Label
from .training import HmmParams

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True, eq=False)
class ClassifierPair:
    """Trained complication and non-complication models plus the prior P(C)."""
    lambda_c: HmmParams
    lambda_nc: HmmParams
    prior_c: float

    def __post_init__(self):
        if not 0.0 < self.prior_c < 1.0:
            raise ValueError(f"prior_c must lie strictly between 0 and 1, got {self.prior_c}")
        if self.lambda_c.n_states != self.lambda_nc.n_states:
            raise ValueError(
                f"models disagree on state count: {self.lambda_c.n_states} vs {self.lambda_nc.n_states}"
            )

    def with_prior(self, prior_c: float) -> "ClassifierPair":
        return ClassifierPair(self.lambda_c, self.lambda_nc, prior_c)


@dataclass(frozen=True, eq=False)
class RiskScoreSeries:
    """scores[t] = P(C | O_1..t+1), one posterior per prefix."""
    scores: np.ndarray

    def __post_init__(self):
        scores = np.array(self.scores, dtype=float)
        if np.any(scores < 0) or np.any(scores > 1) or not np.all(np.isfinite(scores)):
            raise ValueError("risk scores must lie in [0, 1]")
        object.__setattr__(self, "scores", scores)

    def __len__(self) -> int:
        return self.scores.size


def posterior_from_log_likelihoods(log_lik_c: float, log_lik_nc: float, prior_c: float) -> float:
    """
    Bayes posterior P(C | O) from the two sequence log-likelihoods.

    The likelihood ratio is folded into a factor r <= 1 so nothing overflows;
    equal likelihoods return the prior exactly.
    """
    prior_nc = 1.0 - prior_c
    diff = log_lik_c - log_lik_nc
    if diff <= 0:
        ratio = np.exp(diff)
        return float(prior_c * ratio / (prior_c * ratio + prior_nc))
    ratio = np.exp(-diff)
    return float(prior_c / (prior_c + prior_nc * ratio))


def _log_likelihood(seq: ObservedSequence, z: CovariateVector, params: HmmParams) -> float:
    return sequence_log_likelihood(seq, params.initial_distribution(z), params.transition_matrix(z), params.theta3)


def posterior(seq: ObservedSequence, z: CovariateVector, pair: ClassifierPair) -> float:
    """
    P(C | O) under the patient's covariate-resolved models.

    P(NC | O) is 1 - posterior(...).
    """
    return posterior_from_log_likelihoods(
        _log_likelihood(seq, z, pair.lambda_c),
        _log_likelihood(seq, z, pair.lambda_nc),
        pair.prior_c,
    )


class RiskStream:
    """
    Caller-owned incremental scorer for one patient stream.

    Keeps a scaled forward vector per model; each new bin costs O(K^2).
    """

    def __init__(self, z: CovariateVector, pair: ClassifierPair):
        self.pair = pair
        self._c = ForwardFilter(pair.lambda_c.initial_distribution(z), pair.lambda_c.transition_matrix(z),
                                pair.lambda_c.theta3)
        self._nc = ForwardFilter(pair.lambda_nc.initial_distribution(z), pair.lambda_nc.transition_matrix(z),
                                 pair.lambda_nc.theta3)

    def update(self, value: Optional[float]) -> float:
        """Consume the next bin (None if missing) and return the current risk score."""
        return posterior_from_log_likelihoods(self._c.update(value), self._nc.update(value), self.pair.prior_c)


def risk_series(seq: ObservedSequence, z: CovariateVector, pair: ClassifierPair) -> RiskScoreSeries:
    """Posterior after every prefix of seq, computed incrementally."""
    stream = RiskStream(z, pair)
    return RiskScoreSeries([stream.update(value) for value in seq.to_list()])


def check_threshold(threshold: float) -> float:
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie strictly between 0 and 1, got {threshold}")
    return threshold


def decide(p: float, threshold: float = DEFAULT_THRESHOLD) -> Label:
    """C when the posterior reaches the threshold (inclusive), NC otherwise."""
    return Label.C if p >= check_threshold(threshold) else Label.NC


def classify(
    seq: ObservedSequence,
    z: CovariateVector,
    pair: ClassifierPair,
    threshold: float = DEFAULT_THRESHOLD
) -> Label:
    """Decide C or NC for one sequence; see decide for the threshold rule."""
    check_threshold(threshold)
    return decide(posterior(seq, z, pair), threshold)
