"""
covhmm CLI - Command-line interface for the covariate HMM complication classifier
Main entrypoint for ingest, synthetic data, training, scoring and evaluation.
"""

import asyncio
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Awaitable, Dict, List, Optional

import typer

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from agents import EvaluationAgent, IngestAgent, ScoringAgent, SynthAgent, TrainingAgent
from covhmm.covariate_link import DEFAULT_L2
from covhmm.errors import CovHmmError
from covhmm.evaluation import DEFAULT_EARLY_HOURS, DEFAULT_FOLDS
from covhmm.training import TrainConfig

app = typer.Typer(help="Covariate-conditioned HMM classifier for post-operative complications")


@dataclass(frozen=True)
class RunConfig:
    """Flags shared by the training and evaluation subcommands."""
    seed: int
    max_iters: int = 200
    tol: float = 1e-6
    restarts: int = 5
    l2: float = DEFAULT_L2
    states: int = 3
    jobs: Optional[int] = None
    verbose: bool = False

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            max_em_iters=self.max_iters,
            loglik_rel_tol=self.tol,
            seed=self.seed,
            n_restarts=self.restarts,
            l2=self.l2,
            n_states=self.states,
        )


def _run(job: Awaitable[Dict]) -> None:
    """Run an agent call, print its result and exit 0, or print one error line and exit 1."""
    try:
        result = asyncio.run(job)
    except (CovHmmError, ValueError, OSError) as e:
        typer.echo(f"error: {e}", err=True)
        sys.exit(1)
    print(json.dumps(result, indent=2))
    sys.exit(0 if result.get("success", False) else 1)


def _parse_hours(raw: Optional[str]) -> List[int]:
    if raw is None:
        return list(DEFAULT_EARLY_HOURS)
    try:
        hours = [int(part) for part in raw.split(",") if part.strip()]
    except ValueError:
        raise typer.BadParameter(f"expected comma-separated hours, got {raw!r}", param_hint="--hours")
    if not hours:
        raise typer.BadParameter("no hours given", param_hint="--hours")
    return hours


def _open_unit(value: Optional[float]) -> Optional[float]:
    if value is not None and not 0.0 < value < 1.0:
        raise typer.BadParameter(f"must lie strictly between 0 and 1, got {value}")
    return value


def _existing(help_text: str, flag: str):
    return typer.Option(..., flag, exists=True, dir_okay=False, readable=True, help=help_text)


SEED = typer.Option(..., "--seed", help="Random seed (restarts, oversampling, folds)")
MAX_ITERS = typer.Option(200, "--max-iters", min=1, help="Maximum EM iterations per restart")
TOL = typer.Option(1e-6, "--tol", min=0.0, help="Relative log-likelihood gain that counts as converged")
RESTARTS = typer.Option(5, "--restarts", min=1, help="EM restarts per class model")
L2 = typer.Option(DEFAULT_L2, "--l2", min=0.0, help="Ridge penalty on logit coefficients")
STATES = typer.Option(3, "--states", min=2, help="Number of hidden states")
JOBS = typer.Option(None, "--jobs", min=1, help="Worker processes (default: available cores)")
VERBOSE = typer.Option(False, "--verbose", "-v", help="Log at DEBUG level")
PRIOR = typer.Option(None, "--prior", callback=_open_unit, help="Override P(C), strictly between 0 and 1")


@app.command()
def ingest(
    measurements: Path = _existing("measurements.csv (patient_id, hours_since_surgery, temp_f)", "--measurements"),
    covariates: Path = _existing("covariates.csv (patient_id, covariates, label)", "--covariates"),
    out: Path = typer.Option(..., "--out", help="Destination JSON-lines dataset"),
    verbose: bool = VERBOSE
):
    """Bin, impute and join raw CSVs into a sequence dataset."""
    _run(IngestAgent(verbose).ingest(measurements, covariates, out))


@app.command()
def synth(
    seed: int = SEED,
    n: int = typer.Option(600, "--n", min=0, help="Number of patients"),
    prevalence: float = typer.Option(0.24, "--prevalence", help="Probability of the complication class"),
    missing_rate: float = typer.Option(0.0, "--missing-rate", help="Probability that a bin is missing"),
    min_length: int = typer.Option(1, "--min-length", help="Shortest sequence in bins"),
    max_length: int = typer.Option(60, "--max-length", help="Longest sequence in bins"),
    onset_bin: int = typer.Option(0, "--onset-bin", min=0, help="Bin where complication patients diverge"),
    out: Path = typer.Option(..., "--out", help="Destination JSON-lines dataset"),
    truth: Optional[Path] = typer.Option(None, "--truth", help="Optional ground-truth sidecar JSON"),
    verbose: bool = VERBOSE
):
    """Generate a synthetic cohort from the default generating models."""
    _run(SynthAgent(verbose).generate(
        n, seed, out, truth,
        prevalence=prevalence,
        missing_rate=missing_rate,
        min_length=min_length,
        max_length=max_length,
        onset_bin=onset_bin
    ))


@app.command()
def train(
    dataset: Path = _existing("JSON-lines dataset", "--dataset"),
    out: Path = typer.Option(..., "--out", help="Destination classifier JSON"),
    seed: int = SEED,
    max_iters: int = MAX_ITERS,
    tol: float = TOL,
    restarts: int = RESTARTS,
    l2: float = L2,
    states: int = STATES,
    prior: Optional[float] = PRIOR,
    jobs: Optional[int] = JOBS,
    verbose: bool = VERBOSE
):
    """Fit the complication and non-complication models."""
    config = RunConfig(seed, max_iters, tol, restarts, l2, states, jobs, verbose)
    _run(TrainingAgent(verbose).train(dataset, config.train_config(), out, prior, jobs))


@app.command()
def classify(
    dataset: Path = _existing("JSON-lines dataset", "--dataset"),
    classifier: Path = _existing("Classifier JSON", "--classifier"),
    out: Path = typer.Option(..., "--out", help="Destination CSV (patient_id, posterior, predicted, label)"),
    threshold: float = typer.Option(
        0.5, "--threshold", callback=_open_unit,
        help="Posterior threshold for C, strictly between 0 and 1"
    ),
    prior: Optional[float] = PRIOR,
    verbose: bool = VERBOSE
):
    """Posterior complication probability for every sequence."""
    _run(ScoringAgent(verbose).classify(dataset, classifier, out, threshold, prior))


@app.command("score-stream")
def score_stream(
    measurements: Path = _existing("measurements.csv", "--measurements"),
    covariates: Path = _existing("covariates.csv", "--covariates"),
    patient: str = typer.Option(..., "--patient", help="Patient id to replay"),
    classifier: Path = _existing("Classifier JSON", "--classifier"),
    out: Path = typer.Option(..., "--out", help="Destination CSV (bin, hours, observed, value, risk)"),
    prior: Optional[float] = PRIOR,
    verbose: bool = VERBOSE
):
    """Risk score after every bin of one patient's measurements."""
    _run(ScoringAgent(verbose).score_stream(measurements, covariates, patient, classifier, out, prior))


@app.command()
def evaluate(
    dataset: Path = _existing("Labeled JSON-lines dataset", "--dataset"),
    out: Path = typer.Option(..., "--out", help="Destination JSON report (text and scores go next to it)"),
    seed: int = SEED,
    k: int = typer.Option(DEFAULT_FOLDS, "--k", min=2, help="Number of folds"),
    truncate_hours: Optional[int] = typer.Option(None, "--truncate-hours", min=4, help="Score test sequences on their first hours only"),
    max_iters: int = MAX_ITERS,
    tol: float = TOL,
    restarts: int = RESTARTS,
    l2: float = L2,
    states: int = STATES,
    jobs: Optional[int] = JOBS,
    verbose: bool = VERBOSE
):
    """Stratified k-fold cross-validation report."""
    config = RunConfig(seed, max_iters, tol, restarts, l2, states, jobs, verbose)
    _run(EvaluationAgent(verbose).evaluate(dataset, config.train_config(), out, k, truncate_hours, jobs))


@app.command("early-curve")
def early_curve(
    dataset: Path = _existing("Labeled JSON-lines dataset", "--dataset"),
    out: Path = typer.Option(..., "--out", help="Destination CSV (hours, auc, f_score, g_means)"),
    seed: int = SEED,
    k: int = typer.Option(DEFAULT_FOLDS, "--k", min=2, help="Number of folds"),
    hours: Optional[str] = typer.Option(None, "--hours", help="Comma-separated horizons (default 24,28,...,72)"),
    max_iters: int = MAX_ITERS,
    tol: float = TOL,
    restarts: int = RESTARTS,
    l2: float = L2,
    states: int = STATES,
    jobs: Optional[int] = JOBS,
    verbose: bool = VERBOSE
):
    """Mean metrics when test sequences are cut at each horizon."""
    config = RunConfig(seed, max_iters, tol, restarts, l2, states, jobs, verbose)
    _run(EvaluationAgent(verbose).early_curve(dataset, config.train_config(), out, k, _parse_hours(hours), jobs))


@app.command()
def prevalence(
    dataset: Path = _existing("JSON-lines dataset", "--dataset"),
    classifier: Path = _existing("Classifier JSON", "--classifier"),
    out: Path = typer.Option(..., "--out", help="Destination CSV (bin, hours, share_s1, ...)"),
    model: str = typer.Option("c", "--model", help="Class model and subset to decode: c or nc"),
    verbose: bool = VERBOSE
):
    """Share of patients in each Viterbi state over time."""
    if model.lower() not in ("c", "nc"):
        raise typer.BadParameter("must be 'c' or 'nc'", param_hint="--model")
    _run(EvaluationAgent(verbose).prevalence(dataset, classifier, out, model))


def run(argv: Optional[List[str]] = None) -> int:
    """Run the CLI on argv and return its exit status."""
    try:
        app(args=argv, prog_name="covhmm")
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else (0 if e.code is None else 1)
    return 0


if __name__ == "__main__":
    app()
