"""
Unit tests for the pipeline agents.
"""

import json
import os
from pathlib import Path

import pandas as pd
import pytest

from agents import EvaluationAgent, IngestAgent, ScoringAgent, SynthAgent, TrainingAgent
from agents.base_agent import BaseAgent
from agents.evaluation_agent import companion_paths
from covhmm.classifier import classify
from covhmm.covariate_link import COMORBIDITY_FLAGS
from covhmm.errors import SingleClassError
from covhmm.hmm_core import BIN_HOURS
from covhmm.records import Label, read_dataset, write_dataset
from covhmm.serialization import load_classifier
from covhmm.synthgen import GeneratorSpec, generate
from covhmm.training import TrainConfig

FAST = TrainConfig(max_em_iters=6, n_restarts=1, seed=11)


def _export_csvs(sequences, tmp_path):
    """Write a cohort as raw measurement and covariate CSVs, one reading per observed bin."""
    readings = []
    covariates = []
    for s in sequences:
        for t, value in enumerate(s.seq.to_list()):
            if value is not None:
                readings.append((s.patient_id, t * BIN_HOURS + 1.0, round(value, 1)))
        z = s.z
        covariates.append(
            (s.patient_id, z.age, z.gender, z.surgery_hours, *z.comorbidities, s.label.value)
        )
    measurements = tmp_path / "measurements.csv"
    pd.DataFrame(readings, columns=["patient_id", "hours_since_surgery", "temp_f"]).to_csv(
        measurements, index=False
    )
    covariates_path = tmp_path / "covariates.csv"
    columns = ["patient_id", "age", "gender", "surgery_hours", *COMORBIDITY_FLAGS, "label"]
    pd.DataFrame(covariates, columns=columns).to_csv(covariates_path, index=False)
    return measurements, covariates_path


@pytest.fixture
def cohort_path(tmp_path):
    path = tmp_path / "cohort.jsonl"
    path.write_text(write_dataset(generate(GeneratorSpec.default(60, 5, prevalence=0.4, max_length=20))))
    return path


def test_write_outputs_stages_every_file(tmp_path):
    agent = BaseAgent("TestAgent")
    agent.write_outputs({tmp_path / "a.txt": "one\n", tmp_path / "sub" / "b.txt": "two\n"})
    assert (tmp_path / "a.txt").read_text() == "one\n"
    assert (tmp_path / "sub" / "b.txt").read_text() == "two\n"
    assert not [p for p in tmp_path.rglob(".*") if p.is_file()]


def test_write_outputs_refuses_a_directory_target(tmp_path):
    (tmp_path / "taken").mkdir()
    agent = BaseAgent("TestAgent")
    with pytest.raises(IsADirectoryError):
        agent.write_outputs({tmp_path / "a.txt": "one\n", tmp_path / "taken": "two\n"})
    assert sorted(p.name for p in tmp_path.iterdir()) == ["taken"]


def test_failed_rename_restores_the_previous_batch(tmp_path, monkeypatch):
    (tmp_path / "a.txt").write_text("old a\n")
    real_replace = os.replace

    def failing_replace(src, dst):
        if Path(dst).name == "b.txt":
            raise OSError("disk full")
        real_replace(src, dst)

    monkeypatch.setattr(os, "replace", failing_replace)
    agent = BaseAgent("TestAgent")
    with pytest.raises(OSError):
        agent.write_outputs({tmp_path / "a.txt": "new a\n", tmp_path / "b.txt": "new b\n"})
    assert (tmp_path / "a.txt").read_text() == "old a\n"
    assert sorted(p.name for p in tmp_path.iterdir()) == ["a.txt"]


def test_single_job_runs_in_process():
    assert BaseAgent("TestAgent").make_executor(1) is None


@pytest.mark.asyncio
async def test_synth_agent_writes_dataset_and_truth(tmp_path):
    agent = SynthAgent()
    out = tmp_path / "synth.jsonl"
    truth = tmp_path / "truth.json"
    result = await agent.generate(25, 3, out, truth_out=truth, missing_rate=0.1)

    assert result["success"] is True
    assert result["n_patients"] == 25
    assert sum(result["labels"].values()) == 25
    assert len(read_dataset(out)) == 25
    assert json.loads(truth.read_text())["seed"] == 3


@pytest.mark.asyncio
async def test_ingest_agent_builds_dataset(tmp_path):
    sequences = generate(GeneratorSpec.default(12, 4, max_length=15))
    measurements, covariates = _export_csvs(sequences, tmp_path)
    out = tmp_path / "dataset.jsonl"
    result = await IngestAgent().ingest(measurements, covariates, out)

    assert result["n_patients"] == 12
    dataset = read_dataset(out)
    assert [s.patient_id for s in dataset] == sorted(s.patient_id for s in sequences)
    assert all(s.label is not None for s in dataset)


@pytest.mark.asyncio
async def test_training_agent_needs_both_classes(tmp_path):
    only_nc = [s for s in generate(GeneratorSpec.default(30, 2)) if s.label is Label.NC]
    path = tmp_path / "nc.jsonl"
    path.write_text(write_dataset(only_nc))
    with pytest.raises(SingleClassError):
        await TrainingAgent().train(path, FAST, tmp_path / "model.json")
    assert not (tmp_path / "model.json").exists()


@pytest.mark.asyncio
async def test_stream_risk_ends_at_the_classified_posterior(tmp_path):
    """The last streamed score equals the posterior classify reports for the same patient."""
    sequences = generate(GeneratorSpec.default(40, 9, prevalence=0.4, max_length=20, missing_rate=0.2))
    measurements, covariates = _export_csvs(sequences, tmp_path)
    dataset_path = tmp_path / "dataset.jsonl"
    await IngestAgent().ingest(measurements, covariates, dataset_path)

    model = tmp_path / "model.json"
    trained = await TrainingAgent().train(dataset_path, FAST, model)
    assert trained["prior_c"] == pytest.approx(sum(1 for s in sequences if s.label is Label.C) / 40)
    assert load_classifier(model).prior_c == trained["prior_c"]

    scores = tmp_path / "scores.csv"
    classified = await ScoringAgent().classify(dataset_path, model, scores)
    assert classified["n_classified"] == 40
    table = pd.read_csv(scores, dtype={"patient_id": str})
    assert list(table.columns) == ["patient_id", "posterior", "predicted", "label"]
    pair = load_classifier(model)
    dataset = read_dataset(dataset_path)
    assert list(table["predicted"]) == [classify(s.seq, s.z, pair).value for s in dataset]
    edge = (table["posterior"] - 0.5).abs().idxmin()
    await ScoringAgent().classify(dataset_path, model, scores, threshold=float(table["posterior"][edge]))
    assert pd.read_csv(scores, dtype={"patient_id": str})["predicted"][edge] == Label.C.value

    patient = sequences[0].patient_id
    stream_out = tmp_path / "stream.csv"
    streamed = await ScoringAgent().score_stream(measurements, covariates, patient, model, stream_out)
    expected = table.loc[table["patient_id"] == patient, "posterior"].iloc[0]
    assert streamed["final_risk"] == pytest.approx(expected, abs=1e-12)
    stream = pd.read_csv(stream_out)
    assert list(stream["hours"]) == [BIN_HOURS * t for t in range(len(stream))]


@pytest.mark.asyncio
async def test_classify_rejects_threshold_outside_unit_interval(tmp_path, cohort_path):
    with pytest.raises(ValueError):
        await ScoringAgent().classify(cohort_path, tmp_path / "missing.json", tmp_path / "out.csv", threshold=1.0)


@pytest.mark.asyncio
async def test_evaluation_agent_writes_report_and_companions(tmp_path, cohort_path):
    agent = EvaluationAgent()
    first = tmp_path / "run1" / "report.json"
    second = tmp_path / "run2" / "report.json"
    result = await agent.evaluate(cohort_path, FAST, first, k=3)
    await agent.evaluate(cohort_path, FAST, second, k=3)

    assert 0.0 <= result["auc"] <= 1.0
    report = json.loads(first.read_text())
    assert report["k"] == 3
    assert report["seed"] == FAST.seed
    for path in (first, *companion_paths(first).values()):
        assert path.exists()
    assert first.read_bytes() == second.read_bytes()
    assert companion_paths(first)["scores"].read_bytes() == companion_paths(second)["scores"].read_bytes()


@pytest.mark.asyncio
async def test_early_curve_and_prevalence(tmp_path, cohort_path):
    curve = tmp_path / "curve.csv"
    result = await EvaluationAgent().early_curve(cohort_path, FAST, curve, k=3, hours=[24, 48])
    assert [p["hours"] for p in result["points"]] == [24, 48]
    assert list(pd.read_csv(curve)["hours"]) == [24, 48]

    model = tmp_path / "model.json"
    await TrainingAgent().train(cohort_path, FAST, model)
    prevalence = tmp_path / "prevalence.csv"
    summary = await EvaluationAgent().prevalence(cohort_path, model, prevalence, model="nc")
    frame = pd.read_csv(prevalence)
    assert list(frame.columns) == ["bin", "hours", "share_s1", "share_s2", "share_s3"]
    assert summary["n_bins"] == len(frame)
