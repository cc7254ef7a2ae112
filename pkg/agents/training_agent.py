"""
TrainingAgent - Fits the complication and non-complication models
Both class models are fit concurrently; the result is one classifier JSON.
"""

import asyncio
from pathlib import Path
from typing import Any, Dict, Optional, Union

from covhmm.classifier import ClassifierPair
from covhmm.errors import CovHmmError
from covhmm.evaluation import class_training_sets
from covhmm.records import read_dataset
from covhmm.serialization import classifier_to_dict, dumps
from covhmm.training import TrainConfig, fit

from .base_agent import BaseAgent


class TrainingAgent(BaseAgent):
    """
    Agent for Baum-Welch training of a ClassifierPair.
    """

    def __init__(self, verbose: bool = False):
        super().__init__("TrainingAgent", verbose)

    async def train(
        self,
        dataset_path: Union[str, Path],
        config: TrainConfig,
        out: Union[str, Path],
        prior: Optional[float] = None,
        jobs: Optional[int] = 1
    ) -> Dict[str, Any]:
        """
        Train lambda_C and lambda_NC on a labeled dataset.

        The minority class is oversampled before fitting; the prior defaults to
        the C fraction of the original dataset.

        Args:
            dataset_path: JSON-lines dataset
            config: EM settings
            out: Destination classifier JSON
            prior: Optional P(C) override
            jobs: Worker processes; 1 fits both models in threads of this process

        Returns:
            Dictionary with per-class log-likelihoods and the prior
        """
        try:
            dataset = read_dataset(dataset_path)
            labeled = [s for s in dataset if s.label is not None]
            if len(labeled) < len(dataset):
                self.log(f"Ignoring {len(dataset) - len(labeled)} unlabeled sequences", "warning")
            c_set, nc_set, prior_c = class_training_sets(labeled, config.seed)
            self.log(f"Training on {len(c_set)} C and {len(nc_set)} NC sequences after oversampling")

            loop = asyncio.get_running_loop()
            executor = self.make_executor(min(jobs or 2, 2))
            try:
                (lambda_c, report_c), (lambda_nc, report_nc) = await asyncio.gather(
                    loop.run_in_executor(executor, fit, c_set, config),
                    loop.run_in_executor(executor, fit, nc_set, config),
                )
            finally:
                if executor is not None:
                    executor.shutdown()

            pair = ClassifierPair(lambda_c, lambda_nc, prior_c if prior is None else prior)
            self.write_outputs({out: dumps(classifier_to_dict(pair))})
        except CovHmmError as e:
            self.log(f"Training failed: {e}", "error")
            raise

        for name, report in (("C", report_c), ("NC", report_nc)):
            if not report.converged:
                self.log(f"{name} model stopped after {report.iters} iterations without converging", "warning")
        return {
            "success": True,
            "message": "Classifier trained",
            "prior_c": pair.prior_c,
            "log_likelihood_c": report_c.final_log_likelihood,
            "log_likelihood_nc": report_nc.final_log_likelihood,
            "out": str(out)
        }
