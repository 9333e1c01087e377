"""Python bindings for the textspot C++ library."""

import json

from ._core import (
    DEFAULT_CLUSTER_RADIUS,
    TextspotError,
    canonicalize,
    evaluate_json,
    gradcheck,
    knn,
    panoptic_quality,
    run_cli,
    scores_from_counts,
    synth_tile,
)


def evaluate(pred: str, gt: str) -> dict:
    """Panoptic report for two canonical-json drawings, as a dict."""
    return json.loads(evaluate_json(pred, gt))


__all__ = [
    "DEFAULT_CLUSTER_RADIUS",
    "TextspotError",
    "canonicalize",
    "evaluate",
    "evaluate_json",
    "gradcheck",
    "knn",
    "panoptic_quality",
    "run_cli",
    "scores_from_counts",
    "synth_tile",
]
