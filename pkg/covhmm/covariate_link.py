"""
Covariate link - Multinomial-logit maps from patient covariates to HMM probabilities
Category 0 is the base with all-zero parameters. Includes the weighted
Newton-Raphson fit used by the EM M-step.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import logsumexp, softmax

from .errors import DataQualityError, DimensionMismatchError, NonFiniteObjectiveError
from .hmm_core import StateDistribution, TransitionMatrix

logger = logging.getLogger(__name__)

COMORBIDITY_FLAGS = (
    "tumor",
    "htn",
    "arrhythmia",
    "fluid_electrolyte",
    "valvular",
    "liver",
    "pulmonary",
    "diabetes",
)
TRANS_COVARIATES = ("gender", "age", "surgery_hours")
INIT_COVARIATES = TRANS_COVARIATES + COMORBIDITY_FLAGS
CONTINUOUS_COVARIATES = ("age", "surgery_hours")

DEFAULT_L2 = 1e-4
GRADIENT_TOL = 1e-6
MAX_NEWTON_ITERS = 100
MAX_HALVINGS = 40


def _is_binary(value) -> bool:
    # 0.7 or 1.9 must fail here, before anything truncates them
    return not isinstance(value, str) and np.ndim(value) == 0 and value in (0, 1)


@dataclass(frozen=True)
class CovariateVector:
    """
    Time-invariant patient covariates.

    comorbidities follows the order of COMORBIDITY_FLAGS.
    """
    age: float
    gender: int
    surgery_hours: float
    comorbidities: Tuple[int, ...] = (0,) * len(COMORBIDITY_FLAGS)

    def __post_init__(self):
        flags = tuple(self.comorbidities)
        if len(flags) != len(COMORBIDITY_FLAGS):
            raise DataQualityError(
                f"expected {len(COMORBIDITY_FLAGS)} comorbidity flags, got {len(flags)}",
                field="comorbidities"
            )
        if not (np.isfinite(self.age) and self.age >= 0):
            raise DataQualityError(f"age must be a nonnegative number, got {self.age!r}", field="age")
        if not (np.isfinite(self.surgery_hours) and self.surgery_hours >= 0):
            raise DataQualityError(
                f"surgery_hours must be a nonnegative number, got {self.surgery_hours!r}",
                field="surgery_hours"
            )
        if not _is_binary(self.gender):
            raise DataQualityError(f"gender must be 0 or 1, got {self.gender!r}", field="gender")
        for name, flag in zip(COMORBIDITY_FLAGS, flags):
            if not _is_binary(flag):
                raise DataQualityError(f"flag must be 0 or 1, got {flag!r}", field=name)
        object.__setattr__(self, "gender", int(self.gender))
        object.__setattr__(self, "comorbidities", tuple(int(f) for f in flags))

    def init_covariates(self) -> np.ndarray:
        """All 11 predictors of the initial-state model, in INIT_COVARIATES order."""
        return np.array([self.gender, self.age, self.surgery_hours, *self.comorbidities], dtype=float)

    def trans_covariates(self) -> np.ndarray:
        """Gender, age and surgery hours for the transition model."""
        return np.array([self.gender, self.age, self.surgery_hours], dtype=float)

    def to_dict(self) -> Dict[str, float]:
        data = {"age": self.age, "gender": self.gender, "surgery_hours": self.surgery_hours}
        data.update(zip(COMORBIDITY_FLAGS, self.comorbidities))
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, float]) -> "CovariateVector":
        missing = [name for name in INIT_COVARIATES if name not in data]
        if missing:
            raise DataQualityError(f"missing covariates: {', '.join(missing)}", field=missing[0])
        return cls(
            age=float(data["age"]),
            gender=data["gender"],
            surgery_hours=float(data["surgery_hours"]),
            comorbidities=tuple(data[name] for name in COMORBIDITY_FLAGS),
        )


@dataclass(frozen=True, eq=False)
class Standardization:
    """
    Per-covariate (mean, scale) pairs in INIT_COVARIATES order.

    Only age and surgery hours are z-scored; flags keep (0, 1).
    """
    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float)
        scale = np.array(self.scale, dtype=float)
        if mean.shape != (len(INIT_COVARIATES),) or scale.shape != mean.shape:
            raise ValueError(f"standardization needs {len(INIT_COVARIATES)} means and scales")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(scale)) and np.all(scale > 0)):
            raise ValueError("standardization statistics must be finite with positive scales")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", scale)

    @classmethod
    def identity(cls) -> "Standardization":
        return cls(np.zeros(len(INIT_COVARIATES)), np.ones(len(INIT_COVARIATES)))

    @classmethod
    def fit(cls, covariates: Sequence[CovariateVector]) -> "Standardization":
        """Learn age and surgery-hour statistics from training covariates."""
        matrix = np.array([z.init_covariates() for z in covariates])
        mean = np.zeros(len(INIT_COVARIATES))
        scale = np.ones(len(INIT_COVARIATES))
        for name in CONTINUOUS_COVARIATES:
            j = INIT_COVARIATES.index(name)
            mean[j] = matrix[:, j].mean()
            sd = matrix[:, j].std()
            scale[j] = sd if sd > 0 else 1.0
        return cls(mean, scale)

    def init_design(self, z: CovariateVector) -> np.ndarray:
        return (z.init_covariates() - self.mean) / self.scale

    def trans_design(self, z: CovariateVector) -> np.ndarray:
        return self.init_design(z)[:len(TRANS_COVARIATES)]

    def to_dict(self) -> Dict[str, List]:
        return {"names": list(INIT_COVARIATES), "mean": self.mean.tolist(), "scale": self.scale.tolist()}


@dataclass(frozen=True, eq=False)
class LogitBlock:
    """
    Multinomial-logit parameters for K categories over D covariates.

    intercepts has K-1 entries and coefficients is (K-1) x D; category 0 is
    the base with implicit zero parameters.
    """
    intercepts: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        intercepts = np.array(self.intercepts, dtype=float).reshape(-1)
        coefficients = np.array(self.coefficients, dtype=float)
        if coefficients.ndim != 2 or coefficients.shape[0] != intercepts.size:
            raise DimensionMismatchError(
                f"coefficients must be {intercepts.size} x D, got shape {coefficients.shape}"
            )
        if not (np.all(np.isfinite(intercepts)) and np.all(np.isfinite(coefficients))):
            raise ValueError("logit parameters must be finite")
        object.__setattr__(self, "intercepts", intercepts)
        object.__setattr__(self, "coefficients", coefficients)

    @classmethod
    def zeros(cls, n_categories: int, n_features: int) -> "LogitBlock":
        return cls(np.zeros(n_categories - 1), np.zeros((n_categories - 1, n_features)))

    @property
    def n_categories(self) -> int:
        return self.intercepts.size + 1

    @property
    def n_features(self) -> int:
        return self.coefficients.shape[1]

    def to_vector(self) -> np.ndarray:
        """Flatten row by row: [intercept_k, coefficients_k...] for k = 1..K-1."""
        return np.column_stack([self.intercepts, self.coefficients]).ravel()

    @classmethod
    def from_vector(cls, vector: np.ndarray, n_categories: int, n_features: int) -> "LogitBlock":
        theta = np.asarray(vector, dtype=float).reshape(n_categories - 1, n_features + 1)
        return cls(theta[:, 0], theta[:, 1:])

    def permuted(self, order: Sequence[int]) -> "LogitBlock":
        """
        Relabel categories so new category k is old category order[k].

        Probabilities are unchanged; parameters are re-expressed against the new base.
        """
        order = np.asarray(order, dtype=int)
        intercepts = np.concatenate([[0.0], self.intercepts])
        coefficients = np.vstack([np.zeros(self.n_features), self.coefficients])
        base = order[0]
        return LogitBlock(
            intercepts[order[1:]] - intercepts[base],
            coefficients[order[1:]] - coefficients[base]
        )

    def to_dict(self) -> Dict[str, List]:
        return {"intercepts": self.intercepts.tolist(), "coefficients": self.coefficients.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, List], n_features: int) -> "LogitBlock":
        coefficients = np.array(data["coefficients"], dtype=float).reshape(len(data["intercepts"]), n_features)
        return cls(data["intercepts"], coefficients)


def _check_features(block: LogitBlock, n_features: int):
    if n_features != block.n_features:
        raise DimensionMismatchError(
            f"covariate vector has {n_features} entries, logit block expects {block.n_features}"
        )


def logit_prob_matrix(block: LogitBlock, design: np.ndarray) -> np.ndarray:
    """Category probabilities for every row of an N x D design matrix."""
    design = np.atleast_2d(np.asarray(design, dtype=float))
    _check_features(block, design.shape[1])
    eta = block.intercepts + design @ block.coefficients.T
    full = np.column_stack([np.zeros(design.shape[0]), eta])
    return softmax(full, axis=1)


def logit_probs(block: LogitBlock, z: Union[np.ndarray, Sequence[float]]) -> StateDistribution:
    """
    Multinomial-logit probabilities at one covariate vector.

    Args:
        block: Logit parameters
        z: Covariate values, length block.n_features

    Returns:
        StateDistribution with probs[0] = 1 / (1 + sum_k exp(eta_k))
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    _check_features(block, z.size)
    return StateDistribution(logit_prob_matrix(block, z[None, :])[0])


def transition_matrix_at(
    theta2: Sequence[LogitBlock],
    z: Union[CovariateVector, np.ndarray]
) -> TransitionMatrix:
    """
    Transition matrix whose row i is logit_probs(theta2[i], z).

    A CovariateVector is projected with trans_covariates(); an array is used as is.
    """
    if isinstance(z, CovariateVector):
        z = z.trans_covariates()
    return TransitionMatrix(np.vstack([logit_probs(block, z).probs for block in theta2]))


@dataclass(frozen=True, eq=False)
class WeightedCategoricalData:
    """
    Design rows with nonnegative per-category weights.

    design is N x D and weights is N x K.
    """
    design: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        weights = np.array(self.weights, dtype=float)
        design = np.array(self.design, dtype=float)
        if weights.ndim != 2 or weights.shape[0] == 0:
            raise ValueError("weights must be a non-empty N x K matrix")
        if design.ndim != 2:
            raise DimensionMismatchError(f"design must be an N x D matrix, got shape {design.shape}")
        if design.shape[0] != weights.shape[0]:
            raise DimensionMismatchError(
                f"design has {design.shape[0]} rows but weights has {weights.shape[0]}"
            )
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise ValueError("weights must be finite and nonnegative")
        if not np.any(weights.sum(axis=1) > 0):
            raise ValueError("at least one row needs positive total weight")
        if not np.all(np.isfinite(design)):
            raise ValueError("design values must be finite")
        object.__setattr__(self, "design", design)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_rows(cls, rows: Iterable[Tuple[Sequence[float], Sequence[float]]]) -> "WeightedCategoricalData":
        rows = list(rows)
        if not rows:
            raise ValueError("no design rows")
        design, weights = zip(*rows)
        return cls(np.array(design, dtype=float), np.array(weights, dtype=float))


@dataclass(frozen=True)
class LogitFit:
    """Outcome of a weighted logit fit."""
    block: LogitBlock
    converged: bool
    n_iter: int
    objective: float


def _augmented(design: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(design.shape[0]), design])


def _penalty_matrix(n_categories: int, n_features: int) -> np.ndarray:
    """
    Ridge on coefficients centred across all K categories, base included.

    sum_k ||b_k - mean(b)||^2 with b_0 = 0 equals theta' P theta for this P.
    Relabelling categories leaves it unchanged, so the fitted probabilities
    do not depend on which state is the base. Intercepts are not penalized.
    """
    centring = np.eye(n_categories - 1) - 1.0 / n_categories
    return np.kron(centring, np.diag(np.concatenate([[0.0], np.ones(n_features)])))


def _log_probs(theta: np.ndarray, x: np.ndarray, n_categories: int) -> np.ndarray:
    eta = x @ theta.reshape(n_categories - 1, -1).T
    full = np.column_stack([np.zeros(x.shape[0]), eta])
    return full - logsumexp(full, axis=1, keepdims=True)


def logit_objective(block: LogitBlock, data: WeightedCategoricalData, l2: float = DEFAULT_L2) -> float:
    """Penalized weighted log-likelihood sum_n sum_k w_nk log p_k(z_n) - l2/2 * centred coefficient ridge."""
    k = block.n_categories
    _check_features(block, data.design.shape[1])
    theta = block.to_vector()
    log_p = _log_probs(theta, _augmented(data.design), k)
    penalty = 0.5 * l2 * theta @ _penalty_matrix(k, block.n_features) @ theta
    return float(np.sum(data.weights * log_p) - penalty)


def logit_gradient(block: LogitBlock, data: WeightedCategoricalData, l2: float = DEFAULT_L2) -> np.ndarray:
    """Gradient of logit_objective in to_vector() order."""
    k = block.n_categories
    x = _augmented(data.design)
    theta = block.to_vector()
    p = np.exp(_log_probs(theta, x, k))
    totals = data.weights.sum(axis=1)
    residual = data.weights[:, 1:] - totals[:, None] * p[:, 1:]
    return (residual.T @ x).ravel() - l2 * _penalty_matrix(k, block.n_features) @ theta


def logit_hessian(block: LogitBlock, data: WeightedCategoricalData, l2: float = DEFAULT_L2) -> np.ndarray:
    """Hessian of logit_objective in to_vector() order."""
    k = block.n_categories
    x = _augmented(data.design)
    theta = block.to_vector()
    q = np.exp(_log_probs(theta, x, k))[:, 1:]
    totals = data.weights.sum(axis=1)
    cov = totals[:, None, None] * (np.einsum("nk,kl->nkl", q, np.eye(k - 1)) - q[:, :, None] * q[:, None, :])
    size = theta.size
    hessian = -np.einsum("nkl,na,nb->kalb", cov, x, x).reshape(size, size)
    return hessian - l2 * _penalty_matrix(k, block.n_features)


def fit_weighted_multinomial_logit(
    data: WeightedCategoricalData,
    init: LogitBlock,
    l2: float = DEFAULT_L2,
    max_iter: int = MAX_NEWTON_ITERS,
    tol: float = GRADIENT_TOL
) -> LogitFit:
    """
    Maximize the penalized weighted logit objective by Newton-Raphson.

    Steps are halved until the objective does not decrease, so the result is
    never worse than init. A Hessian that is not negative definite falls back
    to a gradient-ascent direction.

    Args:
        data: Design rows and per-category weights
        init: Starting parameters
        l2: Ridge weight on the centred coefficients (intercepts are not penalized)
        max_iter: Newton iteration cap
        tol: Gradient infinity-norm convergence threshold

    Returns:
        LogitFit with the fitted block and a convergence flag

    Raises:
        NonFiniteObjectiveError: objective at init is NaN or infinite
    """
    if l2 < 0:
        raise ValueError(f"l2 must be nonnegative, got {l2}")
    if data.weights.shape[1] != init.n_categories:
        raise DimensionMismatchError(
            f"weights have {data.weights.shape[1]} categories, logit block has {init.n_categories}"
        )
    _check_features(init, data.design.shape[1])
    k, d = init.n_categories, init.n_features

    block = init
    objective = logit_objective(block, data, l2)
    if not np.isfinite(objective):
        raise NonFiniteObjectiveError(f"weighted logit objective is {objective} at the starting point")

    converged = False
    n_iter = 0
    while n_iter < max_iter:
        gradient = logit_gradient(block, data, l2)
        if np.max(np.abs(gradient)) < tol:
            converged = True
            break
        try:
            factor = cho_factor(-logit_hessian(block, data, l2))
            direction = cho_solve(factor, gradient)
        except LinAlgError:
            logger.debug("Hessian not negative definite, using gradient direction")
            direction = gradient

        theta = block.to_vector()
        step = 1.0
        candidate = None
        for _ in range(MAX_HALVINGS):
            trial_theta = theta + step * direction
            if not np.all(np.isfinite(trial_theta)):
                step *= 0.5
                continue
            trial = LogitBlock.from_vector(trial_theta, k, d)
            trial_objective = logit_objective(trial, data, l2)
            if np.isfinite(trial_objective) and trial_objective >= objective:
                candidate = trial
                break
            step *= 0.5
        if candidate is None:
            logger.debug("step halving found no improvement at iteration %d", n_iter)
            break
        block, objective = candidate, trial_objective
        n_iter += 1

    if not converged:
        converged = bool(np.max(np.abs(logit_gradient(block, data, l2))) < tol)
    if not converged:
        logger.warning("weighted logit fit stopped after %d iterations without converging", n_iter)
    return LogitFit(block, converged, n_iter, objective)
