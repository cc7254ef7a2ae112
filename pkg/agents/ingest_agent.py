"""
IngestAgent - Turns raw measurement and covariate CSVs into a sequence dataset
"""

from pathlib import Path
from typing import Any, Dict, Union

from covhmm.errors import CovHmmError
from covhmm.ingest import build_dataset, read_covariates, read_measurements
from covhmm.records import Label, write_dataset

from .base_agent import BaseAgent


class IngestAgent(BaseAgent):
    """
    Agent for preprocessing: binning, single-gap imputation and covariate join.
    """

    def __init__(self, verbose: bool = False):
        super().__init__("IngestAgent", verbose)

    async def ingest(
        self,
        measurements_path: Union[str, Path],
        covariates_path: Union[str, Path],
        out: Union[str, Path]
    ) -> Dict[str, Any]:
        """
        Build the JSON-lines dataset.

        Args:
            measurements_path: measurements.csv (patient_id, hours_since_surgery, temp_f)
            covariates_path: covariates.csv (patient_id, covariates, label)
            out: Destination dataset file

        Returns:
            Dictionary with the patient count per label
        """
        self.log(f"Ingesting {measurements_path} and {covariates_path}")
        try:
            dataset = build_dataset(read_measurements(measurements_path), read_covariates(covariates_path))
            if not dataset:
                raise CovHmmError("no patient survived preprocessing", path=str(measurements_path))
            self.write_outputs({out: write_dataset(dataset)})
        except CovHmmError as e:
            self.log(f"Ingest failed: {e}", "error")
            raise

        counts = {label.value: sum(1 for s in dataset if s.label is label) for label in Label}
        return {
            "success": True,
            "message": f"Wrote {len(dataset)} sequences",
            "n_patients": len(dataset),
            "labels": counts,
            "out": str(out)
        }
