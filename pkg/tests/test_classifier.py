"""
Unit tests for the two-model Bayesian classifier and the streaming risk score.
"""

import numpy as np
import pytest

from covhmm.classifier import (
    ClassifierPair,
    RiskStream,
    classify,
    decide,
    posterior,
    posterior_from_log_likelihoods,
    risk_series,
)
from covhmm.hmm_core import ObservedSequence
from covhmm.records import Label
from covhmm.synthgen import GeneratorSpec, default_generating_pair, generate


@pytest.fixture
def pair():
    lambda_c, lambda_nc = default_generating_pair()
    return ClassifierPair(lambda_c, lambda_nc, 0.24)


@pytest.fixture
def cohort():
    return generate(GeneratorSpec.default(20, 13, missing_rate=0.2))


def test_identical_models_return_the_prior_exactly(cohort):
    lambda_c, _ = default_generating_pair()
    same = ClassifierPair(lambda_c, lambda_c, 0.24)
    for s in cohort:
        assert posterior(s.seq, s.z, same) == 0.24


def test_posterior_from_log_likelihoods():
    assert posterior_from_log_likelihoods(-10.0, -10.0, 0.3) == 0.3
    expected = 0.5 * np.exp(1.0) / (0.5 * np.exp(1.0) + 0.5)
    assert posterior_from_log_likelihoods(-9.0, -10.0, 0.5) == pytest.approx(expected, rel=1e-14)
    assert posterior_from_log_likelihoods(0.0, -5000.0, 0.5) == 1.0
    assert posterior_from_log_likelihoods(-5000.0, 0.0, 0.5) == 0.0


def test_posterior_complements_sum_to_one(pair, cohort):
    swapped = ClassifierPair(pair.lambda_nc, pair.lambda_c, 1.0 - pair.prior_c)
    for s in cohort[:5]:
        assert posterior(s.seq, s.z, pair) + posterior(s.seq, s.z, swapped) == pytest.approx(1.0, abs=1e-12)


def test_risk_series_matches_prefix_posteriors(pair, cohort):
    """Incremental scores equal from-scratch posteriors on every prefix."""
    for s in cohort:
        series = risk_series(s.seq, s.z, pair)
        assert len(series) == len(s.seq)
        for t in range(len(s.seq)):
            assert series.scores[t] == pytest.approx(posterior(s.seq.prefix(t + 1), s.z, pair), abs=1e-12)


def test_risk_stream_accepts_missing_bins(pair, cohort):
    s = cohort[0]
    stream = RiskStream(s.z, pair)
    first = stream.update(98.6)
    assert stream.update(None) == pytest.approx(
        posterior(ObservedSequence.from_values([98.6, None]), s.z, pair), abs=1e-12
    )
    assert 0.0 <= first <= 1.0


def test_hot_sequence_is_classified_as_complication(pair, cohort):
    z = cohort[0].z
    hot = ObservedSequence(np.full(30, 100.5), np.ones(30, dtype=bool))
    cool = ObservedSequence(np.full(30, 97.7), np.ones(30, dtype=bool))
    assert classify(hot, z, pair) is Label.C
    assert posterior(cool, z, pair) < posterior(hot, z, pair)


def test_threshold_is_inclusive(pair, cohort):
    s = cohort[1]
    seq = s.seq.prefix(5)
    p = posterior(seq, s.z, pair)
    assert classify(seq, s.z, pair, threshold=p) is Label.C
    with pytest.raises(ValueError):
        classify(seq, s.z, pair, threshold=1.0)


def test_decide_is_the_rule_classify_applies(pair, cohort):
    for s in cohort:
        p = posterior(s.seq, s.z, pair)
        for threshold in (0.1, 0.5, 0.9):
            assert classify(s.seq, s.z, pair, threshold) is decide(p, threshold)
    assert decide(0.5, 0.5) is Label.C
    assert decide(0.4999, 0.5) is Label.NC
    with pytest.raises(ValueError):
        decide(0.5, 0.0)


def test_pair_validation(pair):
    with pytest.raises(ValueError):
        ClassifierPair(pair.lambda_c, pair.lambda_nc, 0.0)
    assert pair.with_prior(0.5).prior_c == 0.5
