"""
Ingest - Raw temperature measurements and covariates to binned patient sequences
Bins are 4-hour windows [4t, 4t + 4) from the end of surgery, valued at the
window maximum; measurements after 240 hours are dropped.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from imblearn.over_sampling import RandomOverSampler

from .covariate_link import COMORBIDITY_FLAGS, CovariateVector
from .errors import CovHmmError, DataQualityError, EmptySequenceError, SchemaError, SingleClassError
from .hmm_core import BIN_HOURS, MAX_BINS, ObservedSequence
from .records import Label, PatientSequence, split_by_label

logger = logging.getLogger(__name__)

PLAUSIBLE_MIN_F = 90.0
PLAUSIBLE_MAX_F = 110.0
HORIZON_HOURS = MAX_BINS * BIN_HOURS

MEASUREMENT_COLUMNS = ("patient_id", "hours_since_surgery", "temp_f")
COVARIATE_COLUMNS = ("patient_id", "age", "gender", "surgery_hours") + COMORBIDITY_FLAGS + ("label",)


@dataclass(frozen=True)
class RawMeasurement:
    """One timestamped temperature reading in degrees Fahrenheit."""
    patient_id: str
    hours_since_surgery: float
    temperature: float

    def __post_init__(self):
        if not (np.isfinite(self.hours_since_surgery) and self.hours_since_surgery >= 0):
            raise DataQualityError(
                f"hours_since_surgery must be a nonnegative number, got {self.hours_since_surgery!r}",
                patient_id=self.patient_id,
                field="hours_since_surgery"
            )
        if not (np.isfinite(self.temperature) and PLAUSIBLE_MIN_F <= self.temperature <= PLAUSIBLE_MAX_F):
            raise DataQualityError(
                f"temperature {self.temperature!r} outside [{PLAUSIBLE_MIN_F}, {PLAUSIBLE_MAX_F}] F",
                patient_id=self.patient_id,
                field="temp_f"
            )


def bin_measurements(measurements: Sequence[RawMeasurement]) -> ObservedSequence:
    """
    Max-temperature 4-hour bins for one patient.

    The sequence ends at the last bin holding a measurement; empty windows
    before it are missing. Input order does not matter.

    Raises:
        EmptySequenceError: no measurements, or none within the 240-hour horizon
    """
    if not measurements:
        raise EmptySequenceError("no measurements to bin")
    patient_ids = {m.patient_id for m in measurements}
    if len(patient_ids) > 1:
        raise ValueError(f"bin_measurements expects one patient, got {sorted(patient_ids)}")
    patient_id = measurements[0].patient_id

    hours = np.array([m.hours_since_surgery for m in measurements], dtype=float)
    temps = np.array([m.temperature for m in measurements], dtype=float)
    bins = np.floor(hours / BIN_HOURS).astype(int)
    keep = bins < MAX_BINS
    if not np.any(keep):
        raise EmptySequenceError(f"no measurements within {HORIZON_HOURS} hours", patient_id=patient_id)

    bins, temps = bins[keep], temps[keep]
    values = np.full(int(bins.max()) + 1, -np.inf)
    np.maximum.at(values, bins, temps)
    observed = np.isfinite(values)
    return ObservedSequence(np.where(observed, values, np.nan), observed)


def impute_single_gaps(seq: ObservedSequence) -> ObservedSequence:
    """Fill each missing bin whose two neighbours are observed with their mean."""
    observed = seq.observed.copy()
    values = seq.values.copy()
    if len(seq) < 3:
        return seq
    single = ~observed[1:-1] & observed[:-2] & observed[2:]
    gaps = np.flatnonzero(single) + 1
    values[gaps] = (values[gaps - 1] + values[gaps + 1]) / 2.0
    observed[gaps] = True
    return ObservedSequence(values, observed)


def oversample(train_set: Sequence[PatientSequence], seed: int) -> List[PatientSequence]:
    """
    Random oversampling of the minority class to equal class counts.

    imblearn's RandomOverSampler picks the duplicates; it is run on row
    indices so the sequences themselves pass through untouched. Originals
    come first, duplicates after them.

    Raises:
        SingleClassError: one class is absent
    """
    if any(s.label is None for s in train_set):
        raise CovHmmError("oversampling needs every sequence labeled")
    groups = split_by_label(train_set)
    if not groups[Label.C] or not groups[Label.NC]:
        raise SingleClassError("oversampling needs both C and NC sequences")
    if len(groups[Label.C]) == len(groups[Label.NC]):
        return list(train_set)
    rows = np.arange(len(train_set)).reshape(-1, 1)
    labels = np.array([s.label.value for s in train_set])
    sampler = RandomOverSampler(random_state=int(np.random.SeedSequence(seed).generate_state(1)[0]))
    picked, _ = sampler.fit_resample(rows, labels)
    logger.debug("oversampling added %d duplicates of the minority class", len(picked) - len(train_set))
    return [train_set[i] for i in picked[:, 0]]


def _read_csv(path: Union[str, Path], columns: Tuple[str, ...]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype={"patient_id": str, "label": str}, keep_default_na=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise SchemaError(f"unreadable CSV: {e}", path=str(path))
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise SchemaError(f"missing column '{missing[0]}'", path=str(path), field=missing[0])
    return frame


def read_measurements(path: Union[str, Path]) -> Dict[str, List[RawMeasurement]]:
    """
    Load measurements.csv grouped by patient.

    Implausible or malformed rows are dropped with a data-quality warning.
    """
    frame = _read_csv(path, MEASUREMENT_COLUMNS)
    grouped: Dict[str, List[RawMeasurement]] = defaultdict(list)
    rejected = 0
    for row in frame.itertuples(index=False):
        try:
            measurement = RawMeasurement(
                str(row.patient_id),
                float(row.hours_since_surgery),
                float(row.temp_f)
            )
        except (DataQualityError, TypeError, ValueError) as e:
            rejected += 1
            logger.warning("rejected measurement: %s", e)
            continue
        grouped[measurement.patient_id].append(measurement)
    if rejected:
        logger.warning("%d of %d measurement rows rejected in %s", rejected, len(frame), path)
    return dict(grouped)


def read_covariates(path: Union[str, Path]) -> Dict[str, Tuple[CovariateVector, Optional[Label]]]:
    """Load covariates.csv keyed by patient id."""
    frame = _read_csv(path, COVARIATE_COLUMNS)
    table = {}
    for record in frame.to_dict(orient="records"):
        patient_id = str(record["patient_id"])
        try:
            z = CovariateVector.from_dict(record)
            label = Label.parse(None if pd.isna(record["label"]) else record["label"])
        except CovHmmError as e:
            raise e.with_context(patient_id=patient_id, path=str(path))
        except (TypeError, ValueError) as e:
            raise DataQualityError(str(e), patient_id=patient_id, path=str(path))
        if patient_id in table:
            raise DataQualityError("duplicate covariate row", patient_id=patient_id, path=str(path))
        table[patient_id] = (z, label)
    return table


def preprocess(measurements: Sequence[RawMeasurement]) -> ObservedSequence:
    """Binning followed by single-gap imputation."""
    return impute_single_gaps(bin_measurements(measurements))


def build_dataset(
    measurements: Dict[str, List[RawMeasurement]],
    covariates: Dict[str, Tuple[CovariateVector, Optional[Label]]]
) -> List[PatientSequence]:
    """
    Join binned measurements with covariates, sorted by patient id.

    Patients missing either side, or left without an observed bin, are
    skipped with a warning.
    """
    dataset = []
    for patient_id in sorted(set(measurements) | set(covariates)):
        if patient_id not in covariates:
            logger.warning("patient %s has measurements but no covariates; skipped", patient_id)
            continue
        if patient_id not in measurements:
            logger.warning("patient %s has covariates but no usable measurements; skipped", patient_id)
            continue
        z, label = covariates[patient_id]
        try:
            seq = preprocess(measurements[patient_id])
        except EmptySequenceError as e:
            logger.warning("patient %s skipped: %s", patient_id, e.message)
            continue
        dataset.append(PatientSequence(patient_id, seq, z, label))
    logger.info("built %d patient sequences", len(dataset))
    return dataset
