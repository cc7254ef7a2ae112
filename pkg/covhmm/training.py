"""
Training - Baum-Welch EM for the covariate-conditioned HMM
One HmmParams is fit per outcome class. The E-step runs a batched scaled
forward-backward; the M-step refits the logit blocks by weighted Newton-Raphson
(generalized EM) and the Gaussian emissions in closed form.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .covariate_link import (
    DEFAULT_L2,
    INIT_COVARIATES,
    TRANS_COVARIATES,
    CovariateVector,
    LogitBlock,
    Standardization,
    WeightedCategoricalData,
    fit_weighted_multinomial_logit,
    logit_prob_matrix,
    logit_probs,
    transition_matrix_at,
)
from .errors import CovHmmError, EmptySequenceError
from .hmm_core import (
    SIGMA_FLOOR,
    EmissionParams,
    ForwardBackwardResult,
    StateDistribution,
    TransitionMatrix,
    forward_backward_batch,
)
from .records import PatientSequence

logger = logging.getLogger(__name__)

STARVATION_WEIGHT = 1e-8
JITTER_F = 0.3


@dataclass(frozen=True)
class TrainConfig:
    """EM settings. Restart 0 starts from the quantile anchors, later restarts jitter them."""
    max_em_iters: int = 200
    loglik_rel_tol: float = 1e-6
    seed: int = 0
    n_restarts: int = 5
    l2: float = DEFAULT_L2
    n_states: int = 3

    def __post_init__(self):
        if self.max_em_iters < 1:
            raise ValueError(f"max_em_iters must be at least 1, got {self.max_em_iters}")
        if not self.loglik_rel_tol > 0:
            raise ValueError(f"loglik_rel_tol must be positive, got {self.loglik_rel_tol}")
        if self.n_restarts < 1:
            raise ValueError(f"n_restarts must be at least 1, got {self.n_restarts}")
        if self.l2 < 0:
            raise ValueError(f"l2 must be nonnegative, got {self.l2}")
        if self.n_states < 2:
            raise ValueError(f"n_states must be at least 2, got {self.n_states}")


@dataclass(frozen=True)
class TrainReport:
    """Trace of the chosen restart plus restart bookkeeping."""
    loglik_trace: Tuple[float, ...]
    converged: bool
    iters: int
    restart_index_chosen: int
    seed: int = 0
    restart_log_likelihoods: Tuple[float, ...] = ()

    @property
    def final_log_likelihood(self) -> float:
        return self.loglik_trace[-1]

    def to_metadata(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "iterations": self.iters,
            "final_log_likelihood": self.final_log_likelihood,
            "converged": self.converged,
            "restart_index": self.restart_index_chosen,
        }


@dataclass(frozen=True, eq=False)
class HmmParams:
    """
    Full parameter set: initial-state logit (theta1), one transition logit
    per row (theta2), Gaussian emissions (theta3) and the covariate
    standardization the logits were fit against.
    """
    theta1: LogitBlock
    theta2: Tuple[LogitBlock, ...]
    theta3: EmissionParams
    standardization: Standardization = field(default_factory=Standardization.identity)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "theta2", tuple(self.theta2))
        k = self.theta3.n_states
        if self.theta1.n_categories != k or self.theta1.n_features != len(INIT_COVARIATES):
            raise ValueError(
                f"theta1 must cover {k} states and {len(INIT_COVARIATES)} covariates, "
                f"got {self.theta1.n_categories} and {self.theta1.n_features}"
            )
        if len(self.theta2) != k:
            raise ValueError(f"theta2 needs one block per state ({k}), got {len(self.theta2)}")
        for block in self.theta2:
            if block.n_categories != k or block.n_features != len(TRANS_COVARIATES):
                raise ValueError(
                    f"theta2 blocks must cover {k} states and {len(TRANS_COVARIATES)} covariates"
                )

    @classmethod
    def initial(
        cls,
        mu: Sequence[float],
        sigma: Sequence[float],
        standardization: Optional[Standardization] = None
    ) -> "HmmParams":
        """All logit parameters zero, given emissions."""
        k = len(mu)
        return cls(
            LogitBlock.zeros(k, len(INIT_COVARIATES)),
            tuple(LogitBlock.zeros(k, len(TRANS_COVARIATES)) for _ in range(k)),
            EmissionParams(mu, sigma),
            standardization or Standardization.identity(),
        )

    @property
    def n_states(self) -> int:
        return self.theta3.n_states

    def initial_distribution(self, z: CovariateVector) -> StateDistribution:
        return logit_probs(self.theta1, self.standardization.init_design(z))

    def transition_matrix(self, z: CovariateVector) -> TransitionMatrix:
        return transition_matrix_at(self.theta2, self.standardization.trans_design(z))

    def initial_matrix(self, raw_init: np.ndarray) -> np.ndarray:
        """N x K initial distributions for N raw init-covariate rows."""
        return logit_prob_matrix(self.theta1, self._design(raw_init))

    def transition_tensor(self, raw_init: np.ndarray) -> np.ndarray:
        """N x K x K transition matrices for N raw init-covariate rows."""
        design = self._design(raw_init)[:, :len(TRANS_COVARIATES)]
        return np.stack([logit_prob_matrix(block, design) for block in self.theta2], axis=1)

    def _design(self, raw_init: np.ndarray) -> np.ndarray:
        return (raw_init - self.standardization.mean) / self.standardization.scale

    def permuted(self, order: Sequence[int]) -> "HmmParams":
        """Relabel states so new state k is old state order[k]; the model is unchanged."""
        order = np.asarray(order, dtype=int)
        return HmmParams(
            self.theta1.permuted(order),
            tuple(self.theta2[i].permuted(order) for i in order),
            EmissionParams(self.theta3.mu[order], self.theta3.sigma[order]),
            self.standardization,
            dict(self.metadata),
        )

    def sorted_by_mean(self) -> "HmmParams":
        """States ordered by ascending emission mean (low, medium, high risk)."""
        return self.permuted(np.argsort(self.theta3.mu, kind="stable"))

    def with_metadata(self, **metadata: Any) -> "HmmParams":
        merged = dict(self.metadata)
        merged.update(metadata)
        return HmmParams(self.theta1, self.theta2, self.theta3, self.standardization, merged)


class SequenceBatch:
    """Right-padded arrays for a list of sequences, built once per fit."""

    def __init__(self, sequences: Sequence[PatientSequence]):
        if not sequences:
            raise EmptySequenceError("no sequences to batch")
        self.ids = [s.patient_id for s in sequences]
        self.lengths = np.array([len(s.seq) for s in sequences])
        max_len = int(self.lengths.max())
        self.values = np.zeros((len(sequences), max_len))
        self.observed = np.zeros((len(sequences), max_len), dtype=bool)
        for n, s in enumerate(sequences):
            length = len(s.seq)
            self.observed[n, :length] = s.seq.observed
            self.values[n, :length] = np.where(s.seq.observed, s.seq.values, 0.0)
        self.raw_init = np.array([s.z.init_covariates() for s in sequences])

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class EStepResult:
    total_log_likelihood: float
    posteriors: List[ForwardBackwardResult]


def _e_step(batch: SequenceBatch, params: HmmParams) -> EStepResult:
    posteriors = forward_backward_batch(
        batch.values,
        batch.observed,
        batch.lengths,
        params.initial_matrix(batch.raw_init),
        params.transition_tensor(batch.raw_init),
        params.theta3,
        ids=batch.ids,
    )
    return EStepResult(float(sum(p.log_likelihood for p in posteriors)), posteriors)


def e_step(sequences: Sequence[PatientSequence], params: HmmParams) -> EStepResult:
    """
    Forward-backward for every sequence under its covariate-resolved model.

    Returns:
        EStepResult with the summed log-likelihood and per-sequence posteriors

    Raises:
        DegenerateLikelihoodError: naming the offending patient
    """
    return _e_step(SequenceBatch(sequences), params)


def _fit_block(
    design: np.ndarray,
    weights: np.ndarray,
    block: LogitBlock,
    l2: float,
    name: str
) -> LogitBlock:
    if not np.any(weights.sum(axis=1) > 0):
        logger.debug("%s has no expected counts, keeping previous parameters", name)
        return block
    result = fit_weighted_multinomial_logit(WeightedCategoricalData(design, weights), block, l2)
    if not result.converged:
        logger.debug("%s logit fit did not converge in %d iterations", name, result.n_iter)
    return result.block


def _m_step(
    batch: SequenceBatch,
    posteriors: Sequence[ForwardBackwardResult],
    params: HmmParams,
    config: TrainConfig
) -> HmmParams:
    k = params.n_states
    design = params._design(batch.raw_init)
    trans_design = design[:, :len(TRANS_COVARIATES)]

    first = np.array([p.gamma[0] for p in posteriors])
    theta1 = _fit_block(design, first, params.theta1, config.l2, "initial-state")

    expected_transitions = np.array([
        p.xi.sum(axis=0) if len(p.xi) else np.zeros((k, k)) for p in posteriors
    ])
    theta2 = tuple(
        _fit_block(trans_design, expected_transitions[:, i, :], params.theta2[i], config.l2, f"transition row {i}")
        for i in range(k)
    )

    weights = np.concatenate([p.gamma[batch.observed[n, :len(p.gamma)]] for n, p in enumerate(posteriors)])
    observations = batch.values[batch.observed]
    mu = params.theta3.mu.copy()
    sigma = params.theta3.sigma.copy()
    totals = weights.sum(axis=0)
    for j in range(k):
        if totals[j] < STARVATION_WEIGHT:
            logger.warning("state %d has total weight %.3g; keeping its previous emission parameters", j, totals[j])
            continue
        mu[j] = weights[:, j] @ observations / totals[j]
        variance = weights[:, j] @ (observations - mu[j]) ** 2 / totals[j]
        sigma[j] = max(np.sqrt(variance), SIGMA_FLOOR)

    return HmmParams(theta1, theta2, EmissionParams(mu, sigma), params.standardization, dict(params.metadata))


def m_step(
    sequences: Sequence[PatientSequence],
    posteriors: Sequence[ForwardBackwardResult],
    params: HmmParams,
    config: TrainConfig
) -> HmmParams:
    """
    Re-estimate parameters from the posteriors of the preceding e_step.

    theta1 is fit on first-bin posteriors, theta2 row i on expected
    transitions out of state i, emissions on observed-bin posteriors. States
    with total weight below 1e-8 keep their previous emissions.
    """
    return _m_step(SequenceBatch(sequences), posteriors, params, config)


def _quantile_levels(n_states: int) -> np.ndarray:
    if n_states == 3:
        return np.array([25.0, 50.0, 90.0])
    return np.linspace(25.0, 90.0, n_states)


def initial_params(
    sequences: Sequence[PatientSequence],
    config: TrainConfig,
    rng: Optional[np.random.Generator] = None
) -> HmmParams:
    """
    Quantile-anchored starting point, optionally jittered by +/- 0.3 F.

    Means sit at the 25th/50th/90th percentiles of all observed values, every
    sigma at the global standard deviation, all logit parameters at zero.
    """
    observed = np.concatenate([s.seq.values[s.seq.observed] for s in sequences])
    if observed.size == 0:
        raise EmptySequenceError("every bin of the training data is missing")
    mu = np.percentile(observed, _quantile_levels(config.n_states))
    if rng is not None:
        mu = mu + rng.uniform(-JITTER_F, JITTER_F, size=mu.size)
    sigma = np.full(config.n_states, max(float(observed.std()), SIGMA_FLOOR))
    return HmmParams.initial(mu, sigma, Standardization.fit([s.z for s in sequences]))


def run_em(
    batch: SequenceBatch,
    params: HmmParams,
    config: TrainConfig
) -> Tuple[HmmParams, List[float], bool]:
    """Alternate E and M steps from params until the relative gain drops below tolerance."""
    result = _e_step(batch, params)
    trace = [result.total_log_likelihood]
    converged = False
    for iteration in range(1, config.max_em_iters + 1):
        params = _m_step(batch, result.posteriors, params, config)
        result = _e_step(batch, params)
        previous = trace[-1]
        trace.append(result.total_log_likelihood)
        gain = (trace[-1] - previous) / max(abs(previous), np.finfo(float).tiny)
        logger.debug("EM iteration %d: log-likelihood %.6f (relative gain %.3g)", iteration, trace[-1], gain)
        if gain < config.loglik_rel_tol:
            converged = True
            break
    return params, trace, converged


def fit(sequences: Sequence[PatientSequence], config: TrainConfig) -> Tuple[HmmParams, TrainReport]:
    """
    Fit one covariate HMM by Baum-Welch with seeded restarts.

    The restart with the best final log-likelihood wins (ties go to the lower
    restart index). States are returned sorted by ascending emission mean.

    Args:
        sequences: Training sequences of one class
        config: EM settings

    Returns:
        Tuple of (fitted params, TrainReport)

    Raises:
        EmptySequenceError: every bin of every sequence is missing
    """
    if len(sequences) < 2:
        raise CovHmmError(f"training needs at least 2 sequences, got {len(sequences)}")
    batch = SequenceBatch(sequences)
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_restarts)

    best: Optional[Tuple[HmmParams, List[float], bool, int]] = None
    finals = []
    for restart, seed in enumerate(seeds):
        rng = None if restart == 0 else np.random.default_rng(seed)
        start = initial_params(sequences, config, rng)
        params, trace, converged = run_em(batch, start, config)
        finals.append(trace[-1])
        logger.info(
            "restart %d: log-likelihood %.4f after %d iterations%s",
            restart, trace[-1], len(trace) - 1, "" if converged else " (not converged)"
        )
        if best is None or trace[-1] > best[1][-1]:
            best = (params, trace, converged, restart)

    params, trace, converged, restart = best
    report = TrainReport(
        loglik_trace=tuple(trace),
        converged=converged,
        iters=len(trace) - 1,
        restart_index_chosen=restart,
        seed=config.seed,
        restart_log_likelihoods=tuple(finals),
    )
    return params.sorted_by_mean().with_metadata(**report.to_metadata()), report
