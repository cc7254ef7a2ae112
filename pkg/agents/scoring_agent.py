"""
ScoringAgent - Applies a trained classifier to datasets and live patient streams
"""

from pathlib import Path
from typing import Any, Dict, Optional, Union

import pandas as pd

from covhmm.classifier import DEFAULT_THRESHOLD, RiskStream, check_threshold, decide, posterior
from covhmm.errors import CovHmmError, EmptySequenceError
from covhmm.hmm_core import BIN_HOURS
from covhmm.ingest import preprocess, read_covariates, read_measurements
from covhmm.records import Label, read_dataset
from covhmm.serialization import load_classifier

from .base_agent import BaseAgent


class ScoringAgent(BaseAgent):
    """
    Agent for posterior classification and prefix risk scores.
    """

    def __init__(self, verbose: bool = False):
        super().__init__("ScoringAgent", verbose)

    async def classify(
        self,
        dataset_path: Union[str, Path],
        classifier_path: Union[str, Path],
        out: Union[str, Path],
        threshold: float = DEFAULT_THRESHOLD,
        prior: Optional[float] = None
    ) -> Dict[str, Any]:
        """
        Posterior P(C | O) and predicted label for every sequence.

        Writes CSV columns patient_id, posterior, predicted, label.
        """
        check_threshold(threshold)
        try:
            pair = load_classifier(classifier_path)
            if prior is not None:
                pair = pair.with_prior(prior)
            dataset = read_dataset(dataset_path)
            rows = []
            for s in dataset:
                try:
                    p = posterior(s.seq, s.z, pair)
                except CovHmmError as e:
                    raise e.with_context(patient_id=s.patient_id)
                label = None if s.label is None else s.label.value
                rows.append((s.patient_id, p, decide(p, threshold).value, label))
            frame = pd.DataFrame(rows, columns=["patient_id", "posterior", "predicted", "label"])
            self.write_outputs({out: frame.to_csv(index=False)})
        except CovHmmError as e:
            self.log(f"Classification failed: {e}", "error")
            raise

        n_c = sum(1 for row in rows if row[2] == Label.C.value)
        return {
            "success": True,
            "message": f"Classified {len(rows)} sequences",
            "n_classified": len(rows),
            "n_predicted_c": n_c,
            "out": str(out)
        }

    async def score_stream(
        self,
        measurements_path: Union[str, Path],
        covariates_path: Union[str, Path],
        patient_id: str,
        classifier_path: Union[str, Path],
        out: Union[str, Path],
        prior: Optional[float] = None
    ) -> Dict[str, Any]:
        """
        Replay one patient's measurements bin by bin and record the risk score.

        Preprocessing matches ingest, so the last score equals the posterior
        classify reports for the same patient. Writes CSV columns bin, hours,
        observed, value, risk.
        """
        try:
            pair = load_classifier(classifier_path)
            if prior is not None:
                pair = pair.with_prior(prior)
            measurements = read_measurements(measurements_path).get(patient_id)
            if not measurements:
                raise EmptySequenceError("no usable measurements", patient_id=patient_id, path=str(measurements_path))
            covariates = read_covariates(covariates_path)
            if patient_id not in covariates:
                raise CovHmmError("no covariate row", patient_id=patient_id, path=str(covariates_path))
            z, _ = covariates[patient_id]
            seq = preprocess(measurements)

            stream = RiskStream(z, pair)
            rows = []
            for t, value in enumerate(seq.to_list()):
                try:
                    risk = stream.update(value)
                except CovHmmError as e:
                    raise e.with_context(patient_id=patient_id)
                rows.append((t, t * BIN_HOURS, int(value is not None), value, risk))
            frame = pd.DataFrame(rows, columns=["bin", "hours", "observed", "value", "risk"])
            self.write_outputs({out: frame.to_csv(index=False)})
        except CovHmmError as e:
            self.log(f"Stream scoring failed: {e}", "error")
            raise

        return {
            "success": True,
            "message": f"Scored {len(rows)} bins for {patient_id}",
            "patient_id": patient_id,
            "n_bins": len(rows),
            "final_risk": rows[-1][4],
            "out": str(out)
        }
