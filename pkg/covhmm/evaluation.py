"""
Evaluation - Stratified cross-validation, classification metrics and early classification
Each fold oversamples its training split, fits one model per class and scores
the untouched test split. Early-classification horizons reuse the same
per-fold models and only truncate the test sequences.
"""

import logging
from concurrent.futures import Executor
from dataclasses import dataclass, replace
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import rankdata
from sklearn.metrics import roc_curve
from sklearn.model_selection import StratifiedKFold

from .classifier import DEFAULT_THRESHOLD, ClassifierPair, posterior
from .errors import CovHmmError, EmptySequenceError, SingleClassError, UndefinedMetricError
from .hmm_core import BIN_HOURS, MAX_BINS, viterbi
from .ingest import oversample
from .records import Label, PatientSequence, split_by_label
from .training import HmmParams, TrainConfig, fit

logger = logging.getLogger(__name__)

DEFAULT_FOLDS = 5
DEFAULT_EARLY_HOURS = tuple(range(24, 73, 4))


@dataclass(frozen=True)
class ConfusionCounts:
    """Counts at a fixed threshold; the positive class is C."""
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    def to_dict(self) -> Dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def g_means(c: ConfusionCounts) -> float:
    """sqrt(sensitivity * specificity)."""
    if c.tp + c.fn == 0 or c.fp + c.tn == 0:
        raise UndefinedMetricError("G-means needs at least one C and one NC sequence")
    return float(np.sqrt(c.tp / (c.tp + c.fn) * c.tn / (c.fp + c.tn)))


def f_score(c: ConfusionCounts) -> float:
    """Harmonic mean of precision and recall; 0 when there is no true positive."""
    if c.tp + c.fp + c.fn == 0:
        raise UndefinedMetricError("F-score is undefined without any positive prediction or label")
    if c.tp == 0:
        return 0.0
    precision = c.tp / (c.tp + c.fp)
    recall = c.tp / (c.tp + c.fn)
    return 2.0 * precision * recall / (precision + recall)


def auc(scores: Sequence[float], labels: Sequence[Label]) -> float:
    """
    Mann-Whitney AUC: P(score_C > score_NC) + P(tie) / 2.

    Raises:
        SingleClassError: only one label present
    """
    scores = np.asarray(scores, dtype=float)
    positive = np.array([label is Label.C for label in labels], dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("AUC needs both C and NC scores")
    ranks = rankdata(scores)
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def confusion_from_scores(
    scores: Sequence[float],
    labels: Sequence[Label],
    threshold: float = DEFAULT_THRESHOLD
) -> ConfusionCounts:
    predicted = np.asarray(scores, dtype=float) >= threshold
    actual = np.array([label is Label.C for label in labels], dtype=bool)
    return ConfusionCounts(
        tp=int(np.sum(predicted & actual)),
        fp=int(np.sum(predicted & ~actual)),
        tn=int(np.sum(~predicted & ~actual)),
        fn=int(np.sum(~predicted & actual)),
    )


@dataclass(frozen=True)
class MetricsReport:
    """Metrics for one fold (fold set) or the cross-fold mean (fold None)."""
    auc: float
    f_score: float
    g_means: float
    confusion: ConfusionCounts
    n_test: int
    skipped: int = 0
    fold: Optional[int] = None
    roc: Optional[Tuple[Tuple[float, ...], Tuple[float, ...]]] = None

    def __post_init__(self):
        for name in ("auc", "f_score", "g_means"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")

    def to_dict(self) -> Dict[str, Any]:
        document = {
            "fold": self.fold,
            "auc": self.auc,
            "f_score": self.f_score,
            "g_means": self.g_means,
            "confusion": self.confusion.to_dict(),
            "n_test": self.n_test,
            "skipped": self.skipped,
        }
        if self.roc is not None:
            document["roc"] = {"fpr": list(self.roc[0]), "tpr": list(self.roc[1])}
        return document


@dataclass(frozen=True)
class ScoreRow:
    """One out-of-fold posterior."""
    patient_id: str
    fold: int
    posterior: float
    label: Label


@dataclass(frozen=True)
class FoldPlan:
    """
    Stratified k-fold split over patient ids.

    folds[i] is (train ids, test ids); the test ids partition the dataset.
    """
    k: int
    seed: int
    folds: Tuple[Tuple[Tuple[str, ...], Tuple[str, ...]], ...]

    @classmethod
    def build(cls, dataset: Sequence[PatientSequence], k: int = DEFAULT_FOLDS, seed: int = 0) -> "FoldPlan":
        """
        Raises:
            CovHmmError: unlabeled sequences, duplicate ids, or too few patients per class
        """
        if k < 2:
            raise ValueError(f"k must be at least 2, got {k}")
        ids = [s.patient_id for s in dataset]
        if len(set(ids)) != len(ids):
            raise CovHmmError("patient ids must be unique for cross-validation")
        unlabeled = [s.patient_id for s in dataset if s.label is None]
        if unlabeled:
            raise CovHmmError("cross-validation needs labeled sequences", patient_id=unlabeled[0])
        labels = np.array([s.label.value for s in dataset])
        counts = {label: int(np.sum(labels == label.value)) for label in Label}
        if min(counts.values()) < k:
            raise SingleClassError(
                f"each class needs at least {k} patients for {k} folds, got C={counts[Label.C]} NC={counts[Label.NC]}"
            )
        splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
        folds = tuple(
            (tuple(ids[i] for i in train), tuple(ids[i] for i in test))
            for train, test in splitter.split(np.zeros(len(ids)), labels)
        )
        return cls(k, seed, folds)


@dataclass(frozen=True)
class CrossValidationResult:
    folds: Tuple[MetricsReport, ...]
    mean: MetricsReport
    scores: Tuple[ScoreRow, ...] = ()
    truncate_hours: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "truncate_hours": self.truncate_hours,
            "folds": [report.to_dict() for report in self.folds],
            "mean": self.mean.to_dict(),
        }


def fold_seed(seed: int, fold: int, k: int) -> int:
    """Independent per-fold seed derived from the run seed."""
    return int(np.random.SeedSequence(seed).spawn(k)[fold].generate_state(1)[0])


def class_training_sets(
    train_set: Sequence[PatientSequence],
    seed: int
) -> Tuple[List[PatientSequence], List[PatientSequence], float]:
    """
    Oversampled C and NC training subsets plus the prior P(C).

    The prior comes from the split before oversampling.

    Raises:
        SingleClassError: the split lacks one class
    """
    groups = split_by_label(train_set)
    if not groups[Label.C] or not groups[Label.NC]:
        raise SingleClassError("training split needs both C and NC sequences")
    prior_c = len(groups[Label.C]) / (len(groups[Label.C]) + len(groups[Label.NC]))
    balanced = split_by_label(oversample(train_set, seed))
    return balanced[Label.C], balanced[Label.NC], prior_c


def train_fold(train_set: Sequence[PatientSequence], config: TrainConfig) -> ClassifierPair:
    """Fit lambda_C and lambda_NC on one training split."""
    c_set, nc_set, prior_c = class_training_sets(train_set, config.seed)
    lambda_c, _ = fit(c_set, config)
    lambda_nc, _ = fit(nc_set, config)
    return ClassifierPair(lambda_c, lambda_nc, prior_c)


def _train_fold_job(job: Tuple[Sequence[PatientSequence], TrainConfig, int]) -> ClassifierPair:
    train_set, config, fold = job
    logger.info("training fold %d on %d sequences", fold, len(train_set))
    return train_fold(train_set, config)


def train_folds(
    dataset: Sequence[PatientSequence],
    plan: FoldPlan,
    config: TrainConfig,
    executor: Optional[Executor] = None
) -> List[ClassifierPair]:
    """One trained pair per fold, in fold order regardless of completion order."""
    by_id = {s.patient_id: s for s in dataset}
    jobs = [
        ([by_id[i] for i in train_ids], replace(config, seed=fold_seed(config.seed, n, plan.k)), n)
        for n, (train_ids, _) in enumerate(plan.folds)
    ]
    mapper = map if executor is None else executor.map
    return list(mapper(_train_fold_job, jobs))


def truncation_bins(truncate_hours: Optional[int]) -> int:
    """Bins kept when scoring on the first truncate_hours hours."""
    if truncate_hours is None:
        return MAX_BINS
    if truncate_hours < BIN_HOURS:
        raise ValueError(f"truncation needs at least {BIN_HOURS} hours, got {truncate_hours}")
    return int(truncate_hours // BIN_HOURS)


def score_fold(
    pair: ClassifierPair,
    test_set: Sequence[PatientSequence],
    fold: int,
    truncate_hours: Optional[int] = None
) -> Tuple[List[ScoreRow], int]:
    """
    Posterior for every test sequence, truncated when requested.

    Returns:
        Tuple of (score rows, number of patients skipped because truncation left no observed bin)
    """
    n_bins = truncation_bins(truncate_hours)
    rows, skipped = [], 0
    for s in test_set:
        try:
            truncated = s.truncated(n_bins)
        except EmptySequenceError as e:
            logger.warning("fold %d: %s; skipped", fold, e)
            skipped += 1
            continue
        rows.append(ScoreRow(s.patient_id, fold, posterior(truncated.seq, truncated.z, pair), s.label))
    return rows, skipped


def fold_metrics(rows: Sequence[ScoreRow], skipped: int, fold: Optional[int] = None) -> MetricsReport:
    scores = [row.posterior for row in rows]
    labels = [row.label for row in rows]
    area = auc(scores, labels)
    confusion = confusion_from_scores(scores, labels)
    fpr, tpr, _ = roc_curve([label is Label.C for label in labels], scores)
    return MetricsReport(
        auc=area,
        f_score=f_score(confusion),
        g_means=g_means(confusion),
        confusion=confusion,
        n_test=len(rows),
        skipped=skipped,
        fold=fold,
        roc=(tuple(float(x) for x in fpr), tuple(float(x) for x in tpr)),
    )


def mean_report(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Fold-averaged AUC, F and G-means with summed confusion counts."""
    confusion = ConfusionCounts(0, 0, 0, 0)
    for report in reports:
        confusion = confusion + report.confusion
    return MetricsReport(
        auc=float(np.mean([r.auc for r in reports])),
        f_score=float(np.mean([r.f_score for r in reports])),
        g_means=float(np.mean([r.g_means for r in reports])),
        confusion=confusion,
        n_test=sum(r.n_test for r in reports),
        skipped=sum(r.skipped for r in reports),
    )


def _evaluate_pairs(
    dataset: Sequence[PatientSequence],
    plan: FoldPlan,
    pairs: Sequence[ClassifierPair],
    truncate_hours: Optional[int]
) -> CrossValidationResult:
    by_id = {s.patient_id: s for s in dataset}
    reports, all_rows = [], []
    for n, ((_, test_ids), pair) in enumerate(zip(plan.folds, pairs)):
        rows, skipped = score_fold(pair, [by_id[i] for i in test_ids], n, truncate_hours)
        try:
            reports.append(fold_metrics(rows, skipped, n))
        except CovHmmError as e:
            raise type(e)(f"fold {n}: {e.message}", field=e.field)
        all_rows.extend(rows)
    return CrossValidationResult(tuple(reports), mean_report(reports), tuple(all_rows), truncate_hours)


def cross_validate(
    dataset: Sequence[PatientSequence],
    plan: FoldPlan,
    config: TrainConfig,
    truncate_hours: Optional[int] = None,
    executor: Optional[Executor] = None
) -> CrossValidationResult:
    """
    k-fold evaluation of the two-model classifier at threshold 0.5.

    Args:
        dataset: Labeled sequences
        plan: Fold assignment
        config: EM settings; each fold trains with its own derived seed
        truncate_hours: Score only the first floor(hours / 4) bins of each test sequence
        executor: Optional pool to train folds concurrently

    Returns:
        CrossValidationResult with per-fold reports, their mean and the out-of-fold scores
    """
    pairs = train_folds(dataset, plan, config, executor)
    result = _evaluate_pairs(dataset, plan, pairs, truncate_hours)
    logger.info(
        "cross-validation: mean AUC %.4f, F %.4f, G-means %.4f",
        result.mean.auc, result.mean.f_score, result.mean.g_means
    )
    return result


@dataclass(frozen=True)
class EarlyCurvePoint:
    hours: int
    auc: float
    f_score: float
    g_means: float
    skipped: int = 0


def early_curve(
    dataset: Sequence[PatientSequence],
    plan: FoldPlan,
    config: TrainConfig,
    hours: Iterable[int] = DEFAULT_EARLY_HOURS,
    executor: Optional[Executor] = None
) -> List[EarlyCurvePoint]:
    """
    Mean metrics at each truncation horizon.

    Models are trained once per fold on full-length sequences and reused at
    every horizon.
    """
    hours = [int(h) for h in hours]
    if not hours:
        raise ValueError("early_curve needs at least one horizon")
    for h in hours:
        truncation_bins(h)
    pairs = train_folds(dataset, plan, config, executor)
    points = []
    for h in hours:
        mean = _evaluate_pairs(dataset, plan, pairs, h).mean
        logger.info("horizon %dh: mean AUC %.4f", h, mean.auc)
        points.append(EarlyCurvePoint(h, mean.auc, mean.f_score, mean.g_means, mean.skipped))
    return points


def early_curve_frame(points: Sequence[EarlyCurvePoint]) -> pd.DataFrame:
    return pd.DataFrame(
        [(p.hours, p.auc, p.f_score, p.g_means) for p in points],
        columns=["hours", "auc", "f_score", "g_means"],
    )


def state_prevalence(sequences: Sequence[PatientSequence], params: HmmParams) -> pd.DataFrame:
    """
    Share of patients in each Viterbi state at every bin.

    Bin t counts only patients whose sequence reaches it, so each row sums to 1.
    Columns: bin, hours, share_s1 ... share_sK.
    """
    if not sequences:
        raise EmptySequenceError("state prevalence needs at least one sequence")
    max_len = max(len(s) for s in sequences)
    counts = np.zeros((max_len, params.n_states))
    for s in sequences:
        path = viterbi(s.seq, params.initial_distribution(s.z), params.transition_matrix(s.z), params.theta3)
        counts[np.arange(path.size), path] += 1
    shares = counts / counts.sum(axis=1, keepdims=True)
    frame = pd.DataFrame(shares, columns=[f"share_s{j + 1}" for j in range(params.n_states)])
    frame.insert(0, "hours", np.arange(max_len) * BIN_HOURS)
    frame.insert(0, "bin", np.arange(max_len))
    return frame


def scores_frame(rows: Sequence[ScoreRow]) -> pd.DataFrame:
    return pd.DataFrame(
        [(r.patient_id, r.fold, r.posterior, r.label.value) for r in rows],
        columns=["patient_id", "fold", "posterior", "label"],
    )


def render_text(result: CrossValidationResult) -> str:
    """Aligned plain-text table, one row per fold plus the mean."""
    header = f"{'fold':>6} {'auc':>8} {'f_score':>8} {'g_means':>8} {'tp':>5} {'fp':>5} {'tn':>5} {'fn':>5} {'n':>6} {'skip':>5}"
    lines = [header]
    for report in list(result.folds) + [result.mean]:
        c = report.confusion
        name = "mean" if report.fold is None else str(report.fold)
        lines.append(
            f"{name:>6} {report.auc:>8.4f} {report.f_score:>8.4f} {report.g_means:>8.4f} "
            f"{c.tp:>5} {c.fp:>5} {c.tn:>5} {c.fn:>5} {report.n_test:>6} {report.skipped:>5}"
        )
    if result.truncate_hours is not None:
        lines.append(f"test sequences truncated to {result.truncate_hours} hours")
    return "\n".join(lines) + "\n"
