"""Multimodal ransomware family analysis: contrastive per-modality encoders,
gated fusion, a calibrated family classifier with abstention, an agent
feedback loop over training, and the statistics used to compare runs."""

from . import (
    agents,
    calibration,
    classifier,
    dataset,
    dcae,
    fusion,
    harness,
    metrics,
    numerics,
)

__version__ = "0.1.0"

__all__ = [
    "agents",
    "calibration",
    "classifier",
    "dataset",
    "dcae",
    "fusion",
    "harness",
    "metrics",
    "numerics",
    "__version__",
]
