"""
Records - Patient sequence records and the JSON-lines dataset format
One PatientSequence per line: patient id, label, covariates and binned values
(null marks a missing bin).
"""

import json
import logging
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

from .covariate_link import CovariateVector
from .errors import CovHmmError, EmptySequenceError, SchemaError
from .hmm_core import ObservedSequence

logger = logging.getLogger(__name__)


class Label(str, Enum):
    """Outcome class: complication (C) or no complication (NC)."""
    C = "C"
    NC = "NC"

    @classmethod
    def parse(cls, raw: Optional[str]) -> Optional["Label"]:
        if raw is None:
            return None
        text = str(raw).strip().upper()
        if text in ("", "NAN", "NONE"):
            return None
        try:
            return cls(text)
        except ValueError:
            raise SchemaError(f"label must be C, NC or empty, got {raw!r}", field="label")


@dataclass(frozen=True, eq=False)
class PatientSequence:
    """Binned temperature sequence with covariates and an optional label."""
    patient_id: str
    seq: ObservedSequence
    z: CovariateVector
    label: Optional[Label] = None

    def __post_init__(self):
        if self.seq.n_observed == 0:
            raise EmptySequenceError("sequence has no observed bin", patient_id=self.patient_id)

    def __len__(self) -> int:
        return len(self.seq)

    def truncated(self, n_bins: int) -> "PatientSequence":
        """Keep the first n_bins bins (EmptySequenceError if none is observed)."""
        if n_bins < 1:
            raise EmptySequenceError("truncation leaves no bins", patient_id=self.patient_id)
        if n_bins >= len(self.seq):
            return self
        return replace(self, seq=self.seq.prefix(n_bins))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "patient_id": self.patient_id,
            "label": None if self.label is None else self.label.value,
            "covariates": self.z.to_dict(),
            "values": self.seq.to_list(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PatientSequence":
        for key in ("patient_id", "covariates", "values"):
            if key not in data:
                raise SchemaError(f"record is missing '{key}'", field=key)
        patient_id = str(data["patient_id"])
        try:
            return cls(
                patient_id=patient_id,
                seq=ObservedSequence.from_values(data["values"]),
                z=CovariateVector.from_dict(data["covariates"]),
                label=Label.parse(data.get("label")),
            )
        except CovHmmError as e:
            raise e.with_context(patient_id=patient_id)
        except (TypeError, ValueError) as e:
            raise SchemaError(str(e), patient_id=patient_id)


def write_dataset(sequences: Iterable[PatientSequence]) -> str:
    """Render sequences as JSON-lines text."""
    return "".join(json.dumps(s.to_dict(), sort_keys=True) + "\n" for s in sequences)


def read_dataset(path: Union[str, Path]) -> List[PatientSequence]:
    """
    Load a JSON-lines dataset.

    Raises:
        SchemaError: malformed line, with the file and line number in the message
    """
    sequences = []
    with open(path, "r") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaError(f"line {line_number}: invalid JSON ({e.msg})", path=str(path))
            try:
                sequences.append(PatientSequence.from_dict(record))
            except CovHmmError as e:
                raise e.with_context(path=f"{path}:{line_number}")
    logger.info("Loaded %d sequences from %s", len(sequences), path)
    return sequences


def split_by_label(sequences: Iterable[PatientSequence]) -> Dict[Label, List[PatientSequence]]:
    groups: Dict[Label, List[PatientSequence]] = {Label.C: [], Label.NC: []}
    for s in sequences:
        if s.label is not None:
            groups[s.label].append(s)
    return groups
