"""
Synthgen - Seeded synthetic cohorts drawn from known covariate HMMs
Stands in for the clinical dataset and serves as ground truth for recovery tests.
Each patient draws from its own spawned seed, so generation order does not matter.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .covariate_link import COMORBIDITY_FLAGS, INIT_COVARIATES, CovariateVector, LogitBlock, Standardization
from .hmm_core import MAX_BINS, EmissionParams, ObservedSequence
from .records import Label, PatientSequence
from .serialization import model_to_dict
from .training import HmmParams

logger = logging.getLogger(__name__)

AGE_RANGE = (30.0, 85.0)
SURGERY_HOURS_RANGE = (1.0, 6.0)
DEFAULT_FLAG_RATES = (0.10, 0.45, 0.15, 0.20, 0.08, 0.05, 0.15, 0.12)

# Emission means/SDs per state for the complication and non-complication models.
COMPLICATION_EMISSIONS = ((97.793, 98.582, 99.813), (0.434, 0.435, 1.092))
NON_COMPLICATION_EMISSIONS = ((97.724, 98.497, 99.371), (0.432, 0.372, 0.900))


def cohort_standardization() -> Standardization:
    """Standardization matching the uniform age and surgery-hour samplers."""
    mean = np.zeros(len(INIT_COVARIATES))
    scale = np.ones(len(INIT_COVARIATES))
    for name, (low, high) in (("age", AGE_RANGE), ("surgery_hours", SURGERY_HOURS_RANGE)):
        j = INIT_COVARIATES.index(name)
        mean[j] = (low + high) / 2.0
        scale[j] = (high - low) / np.sqrt(12.0)
    return Standardization(mean, scale)


def _generating_params(emissions, theta1_intercepts, theta1_coefficients, theta2) -> HmmParams:
    mu, sigma = emissions
    return HmmParams(
        LogitBlock(theta1_intercepts, theta1_coefficients),
        tuple(LogitBlock(intercepts, coefficients) for intercepts, coefficients in theta2),
        EmissionParams(mu, sigma),
        cohort_standardization(),
    )


def default_generating_pair() -> Tuple[HmmParams, HmmParams]:
    """
    Complication and non-complication models with realistic emissions.

    Complication patients start higher and drift toward the high state with
    age and surgery length; non-complication patients settle in the low state.
    """
    n_init = len(INIT_COVARIATES)
    c_init = np.zeros((2, n_init))
    c_init[0, :3] = (0.0, 0.6, 0.8)
    c_init[1, :3] = (0.0, 0.8, 1.0)
    c_init[1, INIT_COVARIATES.index("htn")] = 0.7
    lambda_c = _generating_params(
        COMPLICATION_EMISSIONS,
        (0.5, -0.5),
        c_init,
        (
            ((-1.0, -2.5), ((0.0, 0.6, 0.0), (0.0, 0.8, 0.0))),
            ((0.0, -1.0), ((0.0, 0.0, 0.7), (0.0, 0.9, 0.9))),
            ((-1.5, 1.5), ((0.0, 0.0, 0.0), (0.0, 0.6, 0.0))),
        ),
    )
    nc_init = np.zeros((2, n_init))
    nc_init[0, :3] = (0.0, 0.5, 0.0)
    nc_init[1, :3] = (0.0, 0.0, 0.6)
    lambda_nc = _generating_params(
        NON_COMPLICATION_EMISSIONS,
        (0.0, -1.5),
        nc_init,
        (
            ((-1.5, -3.0), ((0.0, 0.5, 0.0), (0.0, 0.0, 0.0))),
            ((0.5, -2.0), ((0.0, -0.6, 0.0), (0.0, 0.0, 0.0))),
            ((0.5, 0.5), ((0.0, -0.8, 0.0), (0.0, 0.0, 0.0))),
        ),
    )
    return lambda_c, lambda_nc


@dataclass(frozen=True, eq=False)
class GeneratorSpec:
    """
    Synthetic cohort description.

    onset_bin delays the class difference: a complication patient follows the
    non-complication model before that bin and the complication model from it on.
    """
    params_c: HmmParams
    params_nc: HmmParams
    n_patients: int
    prevalence: float = 0.24
    min_length: int = 1
    max_length: int = MAX_BINS
    missing_rate: float = 0.0
    flag_rates: Tuple[float, ...] = DEFAULT_FLAG_RATES
    seed: int = 0
    onset_bin: int = 0

    def __post_init__(self):
        if self.n_patients < 0:
            raise ValueError(f"n_patients must be nonnegative, got {self.n_patients}")
        if not 0.0 < self.prevalence < 1.0:
            raise ValueError(f"prevalence must lie strictly between 0 and 1, got {self.prevalence}")
        if not 1 <= self.min_length <= self.max_length <= MAX_BINS:
            raise ValueError(
                f"lengths must satisfy 1 <= min <= max <= {MAX_BINS}, got {self.min_length}..{self.max_length}"
            )
        if not 0.0 <= self.missing_rate < 1.0:
            raise ValueError(f"missing_rate must lie in [0, 1), got {self.missing_rate}")
        if len(self.flag_rates) != len(COMORBIDITY_FLAGS) or not all(0 <= r <= 1 for r in self.flag_rates):
            raise ValueError(f"flag_rates needs {len(COMORBIDITY_FLAGS)} probabilities")
        if self.params_c.n_states != self.params_nc.n_states:
            raise ValueError("generating models must share the state count")
        if self.onset_bin < 0:
            raise ValueError(f"onset_bin must be nonnegative, got {self.onset_bin}")

    @classmethod
    def default(cls, n_patients: int, seed: int, **overrides) -> "GeneratorSpec":
        lambda_c, lambda_nc = default_generating_pair()
        return cls(lambda_c, lambda_nc, n_patients, seed=seed, **overrides)


def sample_covariates(rng: np.random.Generator, flag_rates: Sequence[float] = DEFAULT_FLAG_RATES) -> CovariateVector:
    return CovariateVector(
        age=float(rng.uniform(*AGE_RANGE)),
        gender=int(rng.random() < 0.5),
        surgery_hours=float(rng.uniform(*SURGERY_HOURS_RANGE)),
        comorbidities=tuple(int(rng.random() < rate) for rate in flag_rates),
    )


def sample_path(
    rng: np.random.Generator,
    z: CovariateVector,
    n_bins: int,
    params: HmmParams,
    early_params: Optional[HmmParams] = None,
    onset_bin: int = 0
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draw states and temperatures for one patient.

    Bins before onset_bin use early_params when given.
    """
    resolved = {}
    for model in (params, early_params):
        if model is not None:
            resolved[id(model)] = (model.initial_distribution(z).probs, model.transition_matrix(z).rows)

    def model_at(t: int) -> HmmParams:
        return early_params if early_params is not None and t < onset_bin else params

    states = np.empty(n_bins, dtype=int)
    values = np.empty(n_bins)
    for t in range(n_bins):
        current = model_at(t)
        init, trans = resolved[id(current)]
        probs = init if t == 0 else trans[states[t - 1]]
        states[t] = rng.choice(probs.size, p=probs)
        values[t] = rng.normal(current.theta3.mu[states[t]], current.theta3.sigma[states[t]])
    return states, values


def generate_with_states(spec: GeneratorSpec) -> Tuple[List[PatientSequence], List[np.ndarray]]:
    """
    Synthetic cohort plus the true hidden-state path of every patient.

    At least one bin per patient stays observed.
    """
    sequences, paths = [], []
    width = max(5, len(str(spec.n_patients)))
    for n, child in enumerate(np.random.SeedSequence(spec.seed).spawn(spec.n_patients)):
        rng = np.random.default_rng(child)
        z = sample_covariates(rng, spec.flag_rates)
        label = Label.C if rng.random() < spec.prevalence else Label.NC
        n_bins = int(rng.integers(spec.min_length, spec.max_length + 1))
        if label is Label.C:
            states, values = sample_path(rng, z, n_bins, spec.params_c, spec.params_nc, spec.onset_bin)
        else:
            states, values = sample_path(rng, z, n_bins, spec.params_nc)
        observed = rng.random(n_bins) >= spec.missing_rate
        if not observed.any():
            observed[0] = True
        sequences.append(PatientSequence(f"SYN{n:0{width}d}", ObservedSequence(values, observed), z, label))
        paths.append(states)
    logger.info("generated %d synthetic patients", len(sequences))
    return sequences, paths


def generate(spec: GeneratorSpec) -> List[PatientSequence]:
    """Synthetic cohort, fully determined by spec.seed."""
    return generate_with_states(spec)[0]


def ground_truth(spec: GeneratorSpec, sequences: Sequence[PatientSequence], paths: Sequence[np.ndarray]) -> Dict:
    """Sidecar document: generating parameters and true state paths."""
    return {
        "seed": spec.seed,
        "prevalence": spec.prevalence,
        "onset_bin": spec.onset_bin,
        "missing_rate": spec.missing_rate,
        "lambda_c": model_to_dict(spec.params_c),
        "lambda_nc": model_to_dict(spec.params_nc),
        "states": {s.patient_id: [int(x) for x in path] for s, path in zip(sequences, paths)},
    }
