"""
EvaluationAgent - Cross-validation reports, early-classification curves and state prevalence
"""

import asyncio
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

from covhmm.errors import CovHmmError, EmptySequenceError
from covhmm.evaluation import (
    DEFAULT_EARLY_HOURS,
    FoldPlan,
    cross_validate,
    early_curve,
    early_curve_frame,
    render_text,
    scores_frame,
    state_prevalence,
)
from covhmm.records import Label, read_dataset
from covhmm.serialization import dumps, load_classifier
from covhmm.training import TrainConfig

from .base_agent import BaseAgent


def companion_paths(out: Union[str, Path]) -> Dict[str, Path]:
    """Text report and out-of-fold score files written next to a JSON report."""
    out = Path(out)
    return {
        "text": out.with_suffix(".txt"),
        "scores": out.with_name(f"{out.stem}_scores.csv"),
    }


class EvaluationAgent(BaseAgent):
    """
    Agent for stratified cross-validation and the evaluation tables.
    """

    def __init__(self, verbose: bool = False):
        super().__init__("EvaluationAgent", verbose)

    async def evaluate(
        self,
        dataset_path: Union[str, Path],
        config: TrainConfig,
        out: Union[str, Path],
        k: int = 5,
        truncate_hours: Optional[int] = None,
        jobs: Optional[int] = 1
    ) -> Dict[str, Any]:
        """
        Run k-fold cross-validation.

        Writes the JSON report to out, an aligned text table next to it and the
        out-of-fold scores (patient_id, fold, posterior, label).

        Returns:
            Dictionary with the mean AUC, F-score and G-means
        """
        try:
            dataset = read_dataset(dataset_path)
            plan = FoldPlan.build(dataset, k=k, seed=config.seed)
            self.log(f"Cross-validating {len(dataset)} sequences over {k} folds")
            executor = self.make_executor(jobs)
            try:
                result = await asyncio.get_running_loop().run_in_executor(
                    None, cross_validate, dataset, plan, config, truncate_hours, executor
                )
            finally:
                if executor is not None:
                    executor.shutdown()
            document = result.to_dict()
            document["k"] = k
            document["seed"] = config.seed
            paths = companion_paths(out)
            self.write_outputs({
                out: dumps(document),
                paths["text"]: render_text(result),
                paths["scores"]: scores_frame(result.scores).to_csv(index=False),
            })
        except CovHmmError as e:
            self.log(f"Evaluation failed: {e}", "error")
            raise

        return {
            "success": True,
            "message": f"Evaluated {k} folds",
            "auc": result.mean.auc,
            "f_score": result.mean.f_score,
            "g_means": result.mean.g_means,
            "skipped": result.mean.skipped,
            "out": str(out)
        }

    async def early_curve(
        self,
        dataset_path: Union[str, Path],
        config: TrainConfig,
        out: Union[str, Path],
        k: int = 5,
        hours: Sequence[int] = DEFAULT_EARLY_HOURS,
        jobs: Optional[int] = 1
    ) -> Dict[str, Any]:
        """
        Mean metrics per truncation horizon, written as CSV hours, auc, f_score, g_means.
        """
        try:
            dataset = read_dataset(dataset_path)
            plan = FoldPlan.build(dataset, k=k, seed=config.seed)
            self.log(f"Early-classification sweep over {len(hours)} horizons")
            executor = self.make_executor(jobs)
            try:
                points = await asyncio.get_running_loop().run_in_executor(
                    None, early_curve, dataset, plan, config, hours, executor
                )
            finally:
                if executor is not None:
                    executor.shutdown()
            self.write_outputs({out: early_curve_frame(points).to_csv(index=False)})
        except CovHmmError as e:
            self.log(f"Early curve failed: {e}", "error")
            raise

        return {
            "success": True,
            "message": f"Evaluated {len(points)} horizons",
            "points": [{"hours": p.hours, "auc": p.auc} for p in points],
            "out": str(out)
        }

    async def prevalence(
        self,
        dataset_path: Union[str, Path],
        classifier_path: Union[str, Path],
        out: Union[str, Path],
        model: str = "c"
    ) -> Dict[str, Any]:
        """
        Viterbi state shares over time for one class model and its class subset.

        Writes CSV columns bin, hours, share_s1 ... share_sK.
        """
        label = Label.parse(model)
        if label is None:
            raise ValueError("model must be 'c' or 'nc'")
        try:
            pair = load_classifier(classifier_path)
            params = pair.lambda_c if label is Label.C else pair.lambda_nc
            subset = [s for s in read_dataset(dataset_path) if s.label is label]
            if not subset:
                raise EmptySequenceError(f"dataset has no {label.value} sequences", path=str(dataset_path))
            frame = state_prevalence(subset, params)
            self.write_outputs({out: frame.to_csv(index=False)})
        except CovHmmError as e:
            self.log(f"Prevalence failed: {e}", "error")
            raise

        return {
            "success": True,
            "message": f"Decoded {len(subset)} {label.value} sequences",
            "n_sequences": len(subset),
            "n_bins": len(frame),
            "out": str(out)
        }
