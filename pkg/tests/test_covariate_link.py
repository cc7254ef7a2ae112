"""
Unit tests for the multinomial-logit covariate links and their weighted fit.
"""

import logging

import numpy as np
import pytest

from covhmm.covariate_link import (
    COMORBIDITY_FLAGS,
    INIT_COVARIATES,
    CovariateVector,
    LogitBlock,
    Standardization,
    WeightedCategoricalData,
    fit_weighted_multinomial_logit,
    logit_gradient,
    logit_hessian,
    logit_objective,
    logit_prob_matrix,
    logit_probs,
    transition_matrix_at,
)
from covhmm.errors import DataQualityError, DimensionMismatchError
from tests.oracles import random_covariates


def _random_problem(rng, n_rows=None, k=None, d=None):
    n_rows = n_rows or int(rng.integers(5, 40))
    k = k or int(rng.integers(2, 5))
    d = d if d is not None else int(rng.integers(1, 5))
    design = rng.normal(size=(n_rows, d))
    weights = rng.dirichlet(np.ones(k), size=n_rows) * rng.uniform(0.1, 3.0, size=(n_rows, 1))
    block = LogitBlock(rng.normal(size=k - 1), rng.normal(scale=0.7, size=(k - 1, d)))
    return WeightedCategoricalData(design, weights), block


def test_zero_parameters_give_uniform_probabilities():
    block = LogitBlock.zeros(3, 4)
    np.testing.assert_allclose(logit_probs(block, np.ones(4)).probs, [1 / 3] * 3)


def test_base_category_formula():
    """p_0 = 1 / (1 + sum exp(eta)), p_k = exp(eta_k) * p_0."""
    block = LogitBlock([0.5, -1.0], [[1.0, 0.0], [0.0, 2.0]])
    z = np.array([0.3, -0.4])
    eta = np.array([0.5 + 0.3, -1.0 - 0.8])
    p0 = 1.0 / (1.0 + np.exp(eta).sum())
    np.testing.assert_allclose(logit_probs(block, z).probs, [p0, *np.exp(eta) * p0], rtol=1e-14)


def test_large_linear_predictors_stay_finite():
    block = LogitBlock([800.0, -800.0], np.zeros((2, 1)))
    probs = logit_probs(block, [0.0]).probs
    assert np.all(np.isfinite(probs))
    assert probs[1] == pytest.approx(1.0)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        logit_probs(LogitBlock.zeros(3, 3), np.ones(4))


def test_transition_rows_are_stochastic():
    rng = np.random.default_rng(2)
    theta2 = [LogitBlock(rng.normal(size=2), rng.normal(size=(2, 3))) for _ in range(3)]
    matrix = transition_matrix_at(theta2, random_covariates(rng))
    np.testing.assert_allclose(matrix.rows.sum(axis=1), 1.0, atol=1e-12)


def test_vector_round_trip_order():
    block = LogitBlock([1.0, 2.0], [[3.0, 4.0], [5.0, 6.0]])
    np.testing.assert_array_equal(block.to_vector(), [1.0, 3.0, 4.0, 2.0, 5.0, 6.0])
    again = LogitBlock.from_vector(block.to_vector(), 3, 2)
    np.testing.assert_array_equal(again.coefficients, block.coefficients)


def test_permuted_block_keeps_probabilities():
    """Relabelling categories re-expresses parameters against the new base."""
    rng = np.random.default_rng(9)
    block = LogitBlock(rng.normal(size=3), rng.normal(size=(3, 2)))
    design = rng.normal(size=(10, 2))
    order = [2, 0, 3, 1]
    np.testing.assert_allclose(
        logit_prob_matrix(block.permuted(order), design),
        logit_prob_matrix(block, design)[:, order],
        atol=1e-12,
    )


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(77)
    for _ in range(50):
        data, block = _random_problem(rng)
        l2 = float(rng.choice([0.0, 1e-4, 0.5]))
        k, d = block.n_categories, block.n_features
        theta = block.to_vector()
        analytic = logit_gradient(block, data, l2)
        h = 1e-6
        numeric = np.empty_like(theta)
        for i in range(theta.size):
            step = np.zeros_like(theta)
            step[i] = h
            plus = logit_objective(LogitBlock.from_vector(theta + step, k, d), data, l2)
            minus = logit_objective(LogitBlock.from_vector(theta - step, k, d), data, l2)
            numeric[i] = (plus - minus) / (2 * h)
        scale = max(1.0, np.max(np.abs(analytic)))
        assert np.max(np.abs(analytic - numeric)) / scale < 1e-6


def test_hessian_matches_gradient_differences():
    rng = np.random.default_rng(78)
    for _ in range(10):
        data, block = _random_problem(rng)
        k, d = block.n_categories, block.n_features
        theta = block.to_vector()
        analytic = logit_hessian(block, data, 1e-4)
        h = 1e-6
        numeric = np.empty_like(analytic)
        for i in range(theta.size):
            step = np.zeros_like(theta)
            step[i] = h
            plus = logit_gradient(LogitBlock.from_vector(theta + step, k, d), data, 1e-4)
            minus = logit_gradient(LogitBlock.from_vector(theta - step, k, d), data, 1e-4)
            numeric[:, i] = (plus - minus) / (2 * h)
        np.testing.assert_allclose(analytic, numeric, atol=1e-5 * max(1.0, np.max(np.abs(analytic))))


def test_fit_reaches_stationary_point_and_never_decreases():
    rng = np.random.default_rng(101)
    for _ in range(20):
        data, block = _random_problem(rng, n_rows=60)
        before = logit_objective(block, data)
        result = fit_weighted_multinomial_logit(data, block)
        assert result.objective >= before
        assert result.converged
        assert np.max(np.abs(logit_gradient(result.block, data))) < 1e-6


def test_fit_recovers_generating_coefficients():
    """Large sample with integer counts recovers known coefficients."""
    rng = np.random.default_rng(4)
    truth = LogitBlock([0.3, -0.5], [[1.0, -0.8], [-0.6, 0.9]])
    design = rng.normal(size=(4000, 2))
    probs = logit_prob_matrix(truth, design)
    draws = np.array([rng.choice(3, p=p) for p in probs])
    weights = np.eye(3)[draws]
    result = fit_weighted_multinomial_logit(WeightedCategoricalData(design, weights), LogitBlock.zeros(3, 2))
    assert result.converged
    np.testing.assert_allclose(result.block.coefficients, truth.coefficients, atol=0.15)
    np.testing.assert_allclose(result.block.intercepts, truth.intercepts, atol=0.15)


def test_separable_data_stays_finite_with_penalty():
    design = np.array([[-2.0], [-1.0], [1.0], [2.0]])
    weights = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    result = fit_weighted_multinomial_logit(WeightedCategoricalData(design, weights), LogitBlock.zeros(2, 1))
    assert np.all(np.isfinite(result.block.coefficients))
    assert result.block.coefficients[0, 0] > 0


def test_weighted_data_validation():
    with pytest.raises(ValueError):
        WeightedCategoricalData(np.ones((2, 1)), np.array([[-1.0, 2.0], [1.0, 0.0]]))
    with pytest.raises(ValueError):
        WeightedCategoricalData(np.ones((2, 1)), np.zeros((2, 2)))
    with pytest.raises(DimensionMismatchError):
        WeightedCategoricalData(np.ones((3, 1)), np.ones((2, 2)))


def test_covariate_vector_validation_names_the_field():
    with pytest.raises(DataQualityError) as excinfo:
        CovariateVector(age=60.0, gender=2, surgery_hours=3.0)
    assert excinfo.value.field == "gender"
    with pytest.raises(DataQualityError):
        CovariateVector(age=float("nan"), gender=0, surgery_hours=3.0)


def test_standardization_scales_continuous_covariates_only():
    rng = np.random.default_rng(8)
    covariates = [random_covariates(rng) for _ in range(50)]
    standardization = Standardization.fit(covariates)
    design = np.array([standardization.init_design(z) for z in covariates])
    for name in ("age", "surgery_hours"):
        j = INIT_COVARIATES.index(name)
        assert design[:, j].mean() == pytest.approx(0.0, abs=1e-12)
        assert design[:, j].std() == pytest.approx(1.0)
    gender = INIT_COVARIATES.index("gender")
    np.testing.assert_array_equal(design[:, gender], [z.gender for z in covariates])


def test_covariate_vector_rejects_fractional_binaries():
    with pytest.raises(DataQualityError) as excinfo:
        CovariateVector(age=60.0, gender=0.7, surgery_hours=3.0)
    assert excinfo.value.field == "gender"
    flags = (0, 0, 1.9, 0, 0, 0, 0, 0)
    with pytest.raises(DataQualityError) as excinfo:
        CovariateVector(age=60.0, gender=1, surgery_hours=3.0, comorbidities=flags)
    assert excinfo.value.field == "arrhythmia"


def test_covariate_dict_rejects_fractional_binaries():
    data = CovariateVector(age=60.0, gender=1, surgery_hours=3.0).to_dict()
    with pytest.raises(DataQualityError):
        CovariateVector.from_dict({**data, "gender": 0.7})
    with pytest.raises(DataQualityError):
        CovariateVector.from_dict({**data, "liver": 1.9})
    z = CovariateVector.from_dict({**data, "gender": 1.0, "liver": 1.0})
    assert z.gender == 1 and isinstance(z.gender, int)
    assert z.comorbidities[COMORBIDITY_FLAGS.index("liver")] == 1


def test_counts_without_covariates_give_closed_form_intercepts():
    data = WeightedCategoricalData(np.zeros((1, 0)), np.array([[10.0, 20.0, 30.0]]))
    result = fit_weighted_multinomial_logit(data, LogitBlock.zeros(3, 0))
    assert result.converged
    np.testing.assert_allclose(result.block.intercepts, [np.log(2.0), np.log(3.0)], atol=1e-7)
    np.testing.assert_allclose(logit_prob_matrix(result.block, np.zeros((1, 0)))[0], [1 / 6, 1 / 3, 1 / 2],
                               atol=1e-7)


def test_equal_weights_fit_to_zero_parameters():
    rng = np.random.default_rng(12)
    data = WeightedCategoricalData(rng.normal(size=(20, 2)), np.ones((20, 3)))
    start = LogitBlock(rng.normal(size=2), rng.normal(size=(2, 2)))
    result = fit_weighted_multinomial_logit(data, start)
    np.testing.assert_allclose(result.block.to_vector(), 0.0, atol=1e-5)


def test_objective_is_invariant_to_category_labels():
    rng = np.random.default_rng(31)
    for _ in range(20):
        data, block = _random_problem(rng, k=4)
        order = rng.permutation(4)
        relabelled = WeightedCategoricalData(data.design, data.weights[:, order])
        for l2 in (1e-4, 0.5):
            assert logit_objective(block.permuted(order), relabelled, l2) == pytest.approx(
                logit_objective(block, data, l2), rel=1e-10
            )


def test_fit_does_not_depend_on_the_base_category():
    rng = np.random.default_rng(32)
    for l2 in (1e-4, 0.5):
        data, _ = _random_problem(rng, n_rows=40, k=3, d=2)
        order = [2, 0, 1]
        relabelled = WeightedCategoricalData(data.design, data.weights[:, order])
        original = fit_weighted_multinomial_logit(data, LogitBlock.zeros(3, 2), l2)
        swapped = fit_weighted_multinomial_logit(relabelled, LogitBlock.zeros(3, 2), l2)
        assert original.converged and swapped.converged
        np.testing.assert_allclose(
            logit_prob_matrix(swapped.block, data.design),
            logit_prob_matrix(original.block, data.design)[:, order],
            atol=1e-6,
        )


def test_non_convergence_is_logged_as_warning(caplog):
    data, _ = _random_problem(np.random.default_rng(5), n_rows=30, k=3, d=2)
    with caplog.at_level(logging.WARNING, logger="covhmm.covariate_link"):
        result = fit_weighted_multinomial_logit(data, LogitBlock.zeros(3, 2), max_iter=1)
    assert not result.converged
    assert any(r.levelno == logging.WARNING and "without converging" in r.getMessage() for r in caplog.records)
