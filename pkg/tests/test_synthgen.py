"""
Unit tests for the synthetic cohort generator.
"""

import json

import numpy as np
import pytest

from covhmm.covariate_link import LogitBlock
from covhmm.hmm_core import MAX_BINS, EmissionParams
from covhmm.records import Label, write_dataset
from covhmm.synthgen import (
    GeneratorSpec,
    default_generating_pair,
    generate,
    generate_with_states,
    ground_truth,
    sample_covariates,
    sample_path,
)
from covhmm.training import HmmParams


def test_zero_patients_gives_an_empty_cohort():
    assert generate(GeneratorSpec.default(0, 1)) == []


def test_generation_is_deterministic():
    spec = GeneratorSpec.default(40, 17, missing_rate=0.3)
    assert write_dataset(generate(spec)) == write_dataset(generate(spec))
    assert write_dataset(generate(spec)) != write_dataset(generate(GeneratorSpec.default(40, 18, missing_rate=0.3)))


def test_sequences_respect_lengths_and_keep_one_observed_bin():
    sequences = generate(GeneratorSpec.default(200, 2, min_length=3, max_length=12, missing_rate=0.9))
    assert all(3 <= len(s) <= 12 for s in sequences)
    assert all(s.seq.observed.any() for s in sequences)
    assert len({s.patient_id for s in sequences}) == 200
    assert {s.label for s in sequences} == {Label.C, Label.NC}


def test_collapsed_chain_emits_its_mean():
    """Degenerate logits and floored sigma pin every bin to state 0 at its mean."""
    lambda_c, _ = default_generating_pair()
    n_init = lambda_c.theta1.n_features
    n_trans = lambda_c.theta2[0].n_features
    pinned = HmmParams(
        LogitBlock([-60.0, -60.0], np.zeros((2, n_init))),
        tuple(LogitBlock([-60.0, -60.0], np.zeros((2, n_trans))) for _ in range(3)),
        EmissionParams([98.0, 99.0, 100.0], [1e-6, 1e-6, 1e-6]),
        lambda_c.standardization,
    )
    sequences, paths = generate_with_states(GeneratorSpec(pinned, pinned, 20, min_length=MAX_BINS, seed=4))
    for s, path in zip(sequences, paths):
        assert np.all(path == 0)
        np.testing.assert_allclose(s.seq.values, 98.0, atol=0.01)


def test_state_frequencies_follow_the_covariate_link():
    lambda_c, _ = default_generating_pair()
    rng = np.random.default_rng(8)
    z = sample_covariates(rng)
    init = lambda_c.initial_distribution(z).probs
    trans = lambda_c.transition_matrix(z).rows

    first = np.zeros(3)
    pairs = np.zeros((3, 3))
    for _ in range(4000):
        states, _ = sample_path(rng, z, 6, lambda_c)
        first[states[0]] += 1
        np.add.at(pairs, (states[:-1], states[1:]), 1)

    np.testing.assert_allclose(first / first.sum(), init, atol=0.03)
    visited = pairs.sum(axis=1) > 500
    np.testing.assert_allclose(
        pairs[visited] / pairs[visited].sum(axis=1, keepdims=True), trans[visited], atol=0.04
    )


def test_emission_means_converge_per_state():
    _, lambda_nc = default_generating_pair()
    sequences, paths = generate_with_states(GeneratorSpec(lambda_nc, lambda_nc, 300, min_length=40, seed=5))
    values = np.concatenate([s.seq.values for s in sequences])
    states = np.concatenate(paths)
    for j in range(3):
        picked = values[states == j]
        if picked.size > 1000:
            assert picked.mean() == pytest.approx(lambda_nc.theta3.mu[j], abs=0.1)


def test_onset_bin_delays_the_complication_model():
    lambda_c, lambda_nc = default_generating_pair()
    rng = np.random.default_rng(3)
    z = sample_covariates(rng)
    early, _ = sample_path(np.random.default_rng(1), z, 5, lambda_c, lambda_nc, onset_bin=5)
    reference, _ = sample_path(np.random.default_rng(1), z, 5, lambda_nc)
    np.testing.assert_array_equal(early, reference)


def test_ground_truth_sidecar():
    spec = GeneratorSpec.default(10, 6, onset_bin=3)
    sequences, paths = generate_with_states(spec)
    truth = json.loads(json.dumps(ground_truth(spec, sequences, paths)))
    assert set(truth) == {"seed", "prevalence", "onset_bin", "missing_rate", "lambda_c", "lambda_nc", "states"}
    assert truth["onset_bin"] == 3
    assert len(truth["states"][sequences[0].patient_id]) == len(sequences[0])


@pytest.mark.parametrize("overrides", [
    {"prevalence": 0.0},
    {"prevalence": 1.0},
    {"min_length": 0},
    {"min_length": 10, "max_length": 5},
    {"max_length": MAX_BINS + 1},
    {"missing_rate": 1.0},
    {"flag_rates": (0.1,)},
    {"onset_bin": -1},
])
def test_spec_validation(overrides):
    with pytest.raises(ValueError):
        GeneratorSpec.default(10, 0, **overrides)
