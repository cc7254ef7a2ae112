"""
Serialization - JSON documents for trained models and classifier pairs
Floats go through json's repr formatting, so a save/load round trip is bit-stable.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np

from .classifier import ClassifierPair
from .covariate_link import INIT_COVARIATES, TRANS_COVARIATES, LogitBlock, Standardization
from .errors import CovHmmError, SchemaError
from .hmm_core import EmissionParams
from .training import HmmParams

logger = logging.getLogger(__name__)

MODEL_SCHEMA = "covhmm.model/1"
CLASSIFIER_SCHEMA = "covhmm.classifier/1"


def model_to_dict(params: HmmParams) -> Dict[str, Any]:
    document = {
        "schema": MODEL_SCHEMA,
        "n_states": params.n_states,
        "theta1": params.theta1.to_dict(),
        "theta2": [block.to_dict() for block in params.theta2],
        "theta3": {"mu": params.theta3.mu.tolist(), "sigma": params.theta3.sigma.tolist()},
        "standardization": params.standardization.to_dict(),
    }
    if params.metadata:
        document["training"] = dict(params.metadata)
    return document


def _require(document: Dict[str, Any], key: str, context: str) -> Any:
    if not isinstance(document, dict) or key not in document:
        raise SchemaError(f"{context} is missing '{key}'", field=key)
    return document[key]


def model_from_dict(document: Dict[str, Any]) -> HmmParams:
    """
    Rebuild HmmParams from a covhmm.model/1 document.

    Raises:
        SchemaError: wrong schema tag, missing key or inconsistent shapes
    """
    schema = _require(document, "schema", "model document")
    if schema != MODEL_SCHEMA:
        raise SchemaError(f"expected schema {MODEL_SCHEMA!r}, got {schema!r}", field="schema")
    try:
        standardization = _require(document, "standardization", "model document")
        names = list(_require(standardization, "names", "standardization"))
        if names != list(INIT_COVARIATES):
            raise SchemaError(f"standardization names must be {list(INIT_COVARIATES)}", field="standardization")
        theta3 = _require(document, "theta3", "model document")
        params = HmmParams(
            LogitBlock.from_dict(_require(document, "theta1", "model document"), len(INIT_COVARIATES)),
            tuple(
                LogitBlock.from_dict(block, len(TRANS_COVARIATES))
                for block in _require(document, "theta2", "model document")
            ),
            EmissionParams(_require(theta3, "mu", "theta3"), _require(theta3, "sigma", "theta3")),
            Standardization(standardization["mean"], standardization["scale"]),
            dict(document.get("training") or {}),
        )
    except CovHmmError as e:
        raise SchemaError(e.message, field=e.field)
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"invalid model document: {e}")
    n_states = _require(document, "n_states", "model document")
    if n_states != params.n_states:
        raise SchemaError(f"n_states says {n_states} but parameters cover {params.n_states}", field="n_states")
    return params


def classifier_to_dict(pair: ClassifierPair) -> Dict[str, Any]:
    return {
        "schema": CLASSIFIER_SCHEMA,
        "prior_c": float(pair.prior_c),
        "lambda_c": model_to_dict(pair.lambda_c),
        "lambda_nc": model_to_dict(pair.lambda_nc),
    }


def classifier_from_dict(document: Dict[str, Any]) -> ClassifierPair:
    schema = _require(document, "schema", "classifier document")
    if schema != CLASSIFIER_SCHEMA:
        raise SchemaError(f"expected schema {CLASSIFIER_SCHEMA!r}, got {schema!r}", field="schema")
    lambda_c = model_from_dict(_require(document, "lambda_c", "classifier document"))
    lambda_nc = model_from_dict(_require(document, "lambda_nc", "classifier document"))
    try:
        return ClassifierPair(lambda_c, lambda_nc, float(_require(document, "prior_c", "classifier document")))
    except (TypeError, ValueError) as e:
        raise SchemaError(str(e), field="prior_c")


def _default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def dumps(document: Dict[str, Any]) -> str:
    """Stable JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(document, indent=2, sort_keys=True, default=_default) + "\n"


def load_json(path: Union[str, Path]) -> Dict[str, Any]:
    try:
        with open(path, "r") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"invalid JSON at line {e.lineno} ({e.msg})", path=str(path))


def load_classifier(path: Union[str, Path]) -> ClassifierPair:
    try:
        pair = classifier_from_dict(load_json(path))
    except CovHmmError as e:
        raise e.with_context(path=str(path))
    logger.info("Loaded classifier from %s (prior_c=%.4f)", path, pair.prior_c)
    return pair
