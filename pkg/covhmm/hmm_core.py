"""
HMM core - Scaled inference for a Gaussian-emission hidden Markov model
The initial distribution and transition matrix are resolved per patient and stay
constant within a sequence. Missing bins contribute an emission factor of 1.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from .errors import DegenerateLikelihoodError, EmptySequenceError

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-3
MAX_BINS = 60
BIN_HOURS = 4
PROB_TOL = 1e-12


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class EmissionParams:
    """
    Per-state Gaussian emission parameters (degrees Fahrenheit).

    Standard deviations below SIGMA_FLOOR are raised to the floor.
    """
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(-1)
        sigma = np.array(self.sigma, dtype=float).reshape(-1)
        if mu.shape != sigma.shape or mu.size == 0:
            raise ValueError(f"mu and sigma must be non-empty and equal length, got {mu.size} and {sigma.size}")
        if not np.all(np.isfinite(mu)):
            raise ValueError("emission means must be finite")
        if not np.all(np.isfinite(sigma)) or np.any(sigma <= 0):
            raise ValueError("emission standard deviations must be positive and finite")
        object.__setattr__(self, "mu", _frozen(mu))
        object.__setattr__(self, "sigma", _frozen(np.maximum(sigma, SIGMA_FLOOR)))

    @property
    def n_states(self) -> int:
        return self.mu.size


@dataclass(frozen=True, eq=False)
class StateDistribution:
    """Probability vector over hidden states."""
    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float).reshape(-1)
        if probs.size == 0 or np.any(probs < 0) or np.any(probs > 1) or not np.all(np.isfinite(probs)):
            raise ValueError(f"state probabilities must lie in [0, 1], got {probs}")
        if abs(probs.sum() - 1.0) > PROB_TOL:
            raise ValueError(f"state probabilities must sum to 1, got {probs.sum()!r}")
        object.__setattr__(self, "probs", _frozen(probs))

    @property
    def n_states(self) -> int:
        return self.probs.size


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Row-stochastic matrix, rows[i][j] = P(S_t+1 = j | S_t = i)."""
    rows: np.ndarray

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float)
        if rows.ndim != 2 or rows.shape[0] != rows.shape[1] or rows.size == 0:
            raise ValueError(f"transition matrix must be square, got shape {rows.shape}")
        if np.any(rows < 0) or np.any(rows > 1) or not np.all(np.isfinite(rows)):
            raise ValueError("transition probabilities must lie in [0, 1]")
        if np.any(np.abs(rows.sum(axis=1) - 1.0) > PROB_TOL):
            raise ValueError(f"transition rows must sum to 1, got {rows.sum(axis=1)}")
        object.__setattr__(self, "rows", _frozen(rows))

    @property
    def n_states(self) -> int:
        return self.rows.shape[0]


@dataclass(frozen=True, eq=False)
class ObservedSequence:
    """
    Binned temperature sequence with a missing-bin mask.

    Values at missing bins are stored as NaN.
    """
    values: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        observed = np.array(self.observed, dtype=bool).reshape(-1)
        if values.shape != observed.shape:
            raise ValueError("values and observed mask must have equal length")
        if values.size == 0:
            raise EmptySequenceError("sequence has no bins")
        if values.size > MAX_BINS:
            raise ValueError(f"sequence length must be at most {MAX_BINS} bins, got {values.size}")
        if not np.all(np.isfinite(values[observed])):
            raise ValueError("observed values must be finite")
        values = np.where(observed, values, np.nan)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "observed", _frozen(observed))

    @classmethod
    def from_values(cls, values: Sequence[Optional[float]]) -> "ObservedSequence":
        """Build a sequence from a list where None marks a missing bin."""
        observed = [v is not None for v in values]
        return cls(np.array([np.nan if v is None else v for v in values], dtype=float), observed)

    def __len__(self) -> int:
        return self.values.size

    @property
    def n_observed(self) -> int:
        return int(self.observed.sum())

    def prefix(self, n_bins: int) -> "ObservedSequence":
        """Return the first n_bins bins."""
        return ObservedSequence(self.values[:n_bins], self.observed[:n_bins])

    def to_list(self) -> List[Optional[float]]:
        return [float(v) if o else None for v, o in zip(self.values, self.observed)]


@dataclass(frozen=True, eq=False)
class ForwardBackwardResult:
    """
    Smoothed posteriors of one sequence.

    gamma[t, i] = P(S_t = i | O), xi[t, i, j] = P(S_t = i, S_t+1 = j | O) and
    log_likelihood = -sum(log_scaling). The scaling constants are kept as logs;
    with a far-off observation and a narrow state they exceed the float range.
    """
    log_likelihood: float
    gamma: np.ndarray
    xi: np.ndarray
    log_scaling: np.ndarray


def emission_density(params: EmissionParams, state: int, value: float) -> float:
    """
    Gaussian density of a temperature under one state.

    Args:
        params: Emission parameters
        state: Zero-based state index
        value: Temperature in degrees Fahrenheit

    Returns:
        Density N(value; mu[state], sigma[state])
    """
    if not 0 <= state < params.n_states:
        raise ValueError(f"state index {state} out of range for {params.n_states} states")
    if not np.isfinite(value):
        raise ValueError("temperature must be finite")
    return float(norm.pdf(value, loc=params.mu[state], scale=params.sigma[state]))


def log_emission_matrix(values: np.ndarray, observed: np.ndarray, emit: EmissionParams) -> np.ndarray:
    """Log emission densities with shape values.shape + (K,); 0 at missing bins."""
    filled = np.where(observed, values, emit.mu[0])
    log_b = norm.logpdf(filled[..., None], loc=emit.mu, scale=emit.sigma)
    return np.where(observed[..., None], log_b, 0.0)


def _rescale(log_b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    offsets = log_b.max(axis=-1)
    return np.exp(log_b - offsets[..., None]), offsets


def _check_shapes(init: StateDistribution, trans: TransitionMatrix, emit: EmissionParams):
    if not init.n_states == trans.n_states == emit.n_states:
        raise ValueError(
            f"state counts disagree: init={init.n_states}, trans={trans.n_states}, emit={emit.n_states}"
        )


def _forward_step(
    alpha_prev: Optional[np.ndarray],
    init: StateDistribution,
    trans: TransitionMatrix,
    b_row: np.ndarray,
    t: int
) -> Tuple[np.ndarray, float]:
    predicted = init.probs if alpha_prev is None else alpha_prev @ trans.rows
    unnormalized = predicted * b_row
    mass = float(unnormalized.sum())
    if not (mass > 0.0 and np.isfinite(mass)):
        raise DegenerateLikelihoodError(f"forward mass underflowed for every state at bin {t}")
    return unnormalized / mass, mass


class ForwardFilter:
    """
    Incremental scaled forward recursion for one sequence.

    Each update consumes one bin (None for a missing bin) and returns the
    log-likelihood of the prefix seen so far. O(K^2) per bin.
    """

    def __init__(self, init: StateDistribution, trans: TransitionMatrix, emit: EmissionParams):
        _check_shapes(init, trans, emit)
        self.init = init
        self.trans = trans
        self.emit = emit
        self.alpha: Optional[np.ndarray] = None
        self.log_likelihood = 0.0
        self.n_steps = 0

    def update(self, value: Optional[float]) -> float:
        observed = np.array([value is not None])
        values = np.array([np.nan if value is None else value], dtype=float)
        log_b = log_emission_matrix(values, observed, self.emit)
        b_row, offset = _rescale(log_b)
        self.alpha, mass = _forward_step(self.alpha, self.init, self.trans, b_row[0], self.n_steps)
        self.log_likelihood += np.log(mass) + offset[0]
        self.n_steps += 1
        return self.log_likelihood


def _forward(
    seq: ObservedSequence,
    init: StateDistribution,
    trans: TransitionMatrix,
    emit: EmissionParams
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, float]:
    _check_shapes(init, trans, emit)
    b, offsets = _rescale(log_emission_matrix(seq.values, seq.observed, emit))
    n_bins = len(seq)
    alpha = np.empty((n_bins, emit.n_states))
    masses = np.empty(n_bins)
    total = 0.0
    previous = None
    for t in range(n_bins):
        previous, masses[t] = _forward_step(previous, init, trans, b[t], t)
        alpha[t] = previous
        total += np.log(masses[t]) + offsets[t]
    return alpha, masses, b, offsets, float(total)


def sequence_log_likelihood(
    seq: ObservedSequence,
    init: StateDistribution,
    trans: TransitionMatrix,
    emit: EmissionParams
) -> float:
    """
    Log P(O | init, trans, emit) via the scaled forward recursion.

    Raises:
        DegenerateLikelihoodError: forward mass vanished at some bin
    """
    return _forward(seq, init, trans, emit)[4]


def forward_backward(
    seq: ObservedSequence,
    init: StateDistribution,
    trans: TransitionMatrix,
    emit: EmissionParams
) -> ForwardBackwardResult:
    """
    Scaled forward-backward pass.

    Returns:
        ForwardBackwardResult with gamma (T x K), xi (T-1 x K x K) and log scaling constants
    """
    alpha, masses, b, offsets, total = _forward(seq, init, trans, emit)
    a = trans.rows
    beta = np.ones_like(alpha)
    for t in range(len(seq) - 2, -1, -1):
        beta[t] = a @ (b[t + 1] * beta[t + 1]) / masses[t + 1]

    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)
    xi = (
        alpha[:-1, :, None]
        * a[None, :, :]
        * (b[1:] * beta[1:])[:, None, :]
        / masses[1:, None, None]
    )
    return ForwardBackwardResult(total, gamma, xi, -(np.log(masses) + offsets))


def forward_backward_batch(
    values: np.ndarray,
    observed: np.ndarray,
    lengths: np.ndarray,
    init: np.ndarray,
    trans: np.ndarray,
    emit: EmissionParams,
    ids: Optional[Sequence[str]] = None
) -> List[ForwardBackwardResult]:
    """
    Forward-backward over N right-padded sequences at once.

    Padding bins past each length must be unobserved; they are carried through
    with an identity transition so they leave every result unchanged.

    Args:
        values: N x Tmax temperatures
        observed: N x Tmax mask, False on missing and padding bins
        lengths: N true lengths
        init: N x K initial distributions
        trans: N x K x K transition matrices
        emit: Shared emission parameters
        ids: Optional sequence ids for error messages

    Returns:
        One ForwardBackwardResult per sequence, trimmed to its length
    """
    n_seq, max_len = values.shape
    lengths = np.asarray(lengths)
    b, offsets = _rescale(log_emission_matrix(values, observed, emit))

    alpha = np.empty((n_seq, max_len, emit.n_states))
    masses = np.ones((n_seq, max_len))
    predicted = init
    for t in range(max_len):
        if t > 0:
            stepped = np.einsum("ni,nij->nj", alpha[:, t - 1], trans)
            predicted = np.where((t < lengths)[:, None], stepped, alpha[:, t - 1])
        unnormalized = predicted * b[:, t]
        step_mass = unnormalized.sum(axis=1)
        bad = ~(step_mass > 0.0) | ~np.isfinite(step_mass)
        if np.any(bad):
            n = int(np.flatnonzero(bad)[0])
            raise DegenerateLikelihoodError(
                f"forward mass underflowed for every state at bin {t}",
                patient_id=None if ids is None else ids[n]
            )
        alpha[:, t] = unnormalized / step_mass[:, None]
        masses[:, t] = step_mass

    log_masses = np.log(masses) + offsets
    beta = np.ones_like(alpha)
    for t in range(max_len - 2, -1, -1):
        stepped = np.einsum("nij,nj->ni", trans, b[:, t + 1] * beta[:, t + 1]) / masses[:, t + 1, None]
        beta[:, t] = np.where((t + 1 < lengths)[:, None], stepped, 1.0)

    gamma = alpha * beta
    gamma /= gamma.sum(axis=2, keepdims=True)
    xi = (
        alpha[:, :-1, :, None]
        * trans[:, None, :, :]
        * (b[:, 1:] * beta[:, 1:])[:, :, None, :]
        / masses[:, 1:, None, None]
    )

    results = []
    for n in range(n_seq):
        length = int(lengths[n])
        results.append(ForwardBackwardResult(
            float(log_masses[n, :length].sum()),
            gamma[n, :length],
            xi[n, :length - 1],
            -log_masses[n, :length]
        ))
    return results


def _log(probs: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(probs)


def viterbi(
    seq: ObservedSequence,
    init: StateDistribution,
    trans: TransitionMatrix,
    emit: EmissionParams
) -> np.ndarray:
    """
    Most probable state path, computed in log space.

    Ties go to the lower state index.

    Returns:
        Integer array of zero-based states, length T
    """
    _check_shapes(init, trans, emit)
    log_b = log_emission_matrix(seq.values, seq.observed, emit)
    log_a = _log(trans.rows)
    n_bins, n_states = log_b.shape

    delta = _log(init.probs) + log_b[0]
    back = np.zeros((n_bins, n_states), dtype=int)
    columns = np.arange(n_states)
    for t in range(1, n_bins):
        candidates = delta[:, None] + log_a
        back[t] = np.argmax(candidates, axis=0)
        delta = candidates[back[t], columns] + log_b[t]

    path = np.empty(n_bins, dtype=int)
    path[-1] = int(np.argmax(delta))
    for t in range(n_bins - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


def path_log_probability(
    seq: ObservedSequence,
    init: StateDistribution,
    trans: TransitionMatrix,
    emit: EmissionParams,
    path: Sequence[int]
) -> float:
    """Joint log-probability log P(O, S = path)."""
    path = np.asarray(path, dtype=int)
    log_b = log_emission_matrix(seq.values, seq.observed, emit)
    steps = np.arange(len(seq))
    total = _log(init.probs)[path[0]] + log_b[steps, path].sum()
    if len(seq) > 1:
        total += _log(trans.rows)[path[:-1], path[1:]].sum()
    return float(total)
