"""
covhmm Agents Package
Async agents orchestrating the ingest, training, scoring and evaluation pipelines.
"""

from .base_agent import BaseAgent
from .ingest_agent import IngestAgent
from .synth_agent import SynthAgent
from .training_agent import TrainingAgent
from .scoring_agent import ScoringAgent
from .evaluation_agent import EvaluationAgent

__all__ = [
    "BaseAgent",
    "IngestAgent",
    "SynthAgent",
    "TrainingAgent",
    "ScoringAgent",
    "EvaluationAgent",
]
