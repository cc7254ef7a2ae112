"""
SynthAgent - Writes seeded synthetic cohorts and their ground truth
"""

import json
from pathlib import Path
from typing import Any, Dict, Optional, Union

from covhmm.records import Label, write_dataset
from covhmm.synthgen import GeneratorSpec, generate_with_states, ground_truth

from .base_agent import BaseAgent


class SynthAgent(BaseAgent):
    """
    Agent for synthetic data generation from the default generating models.
    """

    def __init__(self, verbose: bool = False):
        super().__init__("SynthAgent", verbose)

    async def generate(
        self,
        n_patients: int,
        seed: int,
        out: Union[str, Path],
        truth_out: Optional[Union[str, Path]] = None,
        **overrides: Any
    ) -> Dict[str, Any]:
        """
        Generate a cohort.

        Args:
            n_patients: Number of patients
            seed: Generation seed
            out: Destination dataset file
            truth_out: Optional ground-truth sidecar (generating parameters and true states)
            **overrides: Other GeneratorSpec fields (prevalence, missing_rate, onset_bin, ...)

        Returns:
            Dictionary with the patient count per label
        """
        spec = GeneratorSpec.default(n_patients, seed, **overrides)
        self.log(f"Generating {n_patients} patients with seed {seed}")
        sequences, paths = generate_with_states(spec)

        outputs = {out: write_dataset(sequences)}
        if truth_out is not None:
            outputs[truth_out] = json.dumps(ground_truth(spec, sequences, paths), sort_keys=True) + "\n"
        self.write_outputs(outputs)

        return {
            "success": True,
            "message": f"Wrote {len(sequences)} synthetic sequences",
            "n_patients": len(sequences),
            "labels": {label.value: sum(1 for s in sequences if s.label is label) for label in Label},
            "out": str(out)
        }
