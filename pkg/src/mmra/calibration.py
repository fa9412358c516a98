"""Post-hoc probability calibration and confidence-based abstention.

Three interchangeable kinds: identity, temperature scaling (one scalar,
argmax preserving) and vector scaling (per-class scale and shift).  Both
parametric kinds are fitted by minimizing validation NLL and always include
the identity in their search, so a fitted model is never worse than
uncalibrated on its own fitting set.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .classifier import Prediction
from .numerics import softmax

CALIBRATION_KINDS = ("identity", "temperature", "vector")

LOG_T_RANGE = (-3.0, 3.0)

DEFAULT_ABSTAIN_TAU = 0.7

PROB_FLOOR = 1e-12

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class CalibrationError(ValueError):
    """Degenerate fitting set or invalid calibration request."""


@dataclass
class CalibrationModel:
    kind: str
    temperature: float = 1.0
    scale: np.ndarray | None = None
    shift: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kind not in CALIBRATION_KINDS:
            raise CalibrationError(f"unknown calibration kind {self.kind!r}")
        if self.temperature <= 0:
            raise CalibrationError("temperature must be positive")


@dataclass
class AbstainDecision:
    sample_hash: str
    confidence: float
    threshold: float
    kept: bool


@dataclass
class AbstainResult:
    kept: list[Prediction]
    abstained: list[Prediction]
    decisions: list[AbstainDecision]
    coverage: float
    abstention_rate: float


def nll_of_probs(probs: np.ndarray, y: np.ndarray) -> float:
    """Mean negative log-likelihood with the probability floor applied."""
    p = np.maximum(probs[np.arange(len(y)), y], PROB_FLOOR)
    return float(-np.log(p).mean())


def apply_calibration(model: CalibrationModel, logits: np.ndarray) -> np.ndarray:
    """Calibrated probabilities for raw logits (vector or batch)."""
    z = np.asarray(logits, dtype=np.float64)
    if model.kind == "identity":
        return softmax(z)
    if model.kind == "temperature":
        return softmax(z / model.temperature)
    if model.scale is None or model.shift is None:
        raise CalibrationError("vector calibration is missing its parameters")
    return softmax(z * model.scale + model.shift)


def _validate_fit_inputs(logits: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(y, dtype=np.int64)
    if z.ndim != 2 or z.shape[0] != labels.shape[0]:
        raise CalibrationError("logit rows and labels must align")
    if z.shape[0] == 0:
        raise CalibrationError("empty fitting set")
    if len(set(labels.tolist())) < 2:
        raise CalibrationError("fitting set must contain at least two classes")
    return z, labels


def fit_calibration(kind: str, logits: np.ndarray, y: np.ndarray) -> CalibrationModel:
    """Fit a calibration model on validation logits by NLL minimization.

    temperature: golden-section search over ln T in [-3, 3], then the better
    of the found T and T=1, so the fit can never lose to identity.
    vector: 500 steps of gradient descent on (scale, shift) from the identity
    start, keeping the best iterate seen.
    """
    if kind == "identity":
        return CalibrationModel(kind="identity")
    z, labels = _validate_fit_inputs(logits, y)

    if kind == "temperature":
        def nll_at(log_t: float) -> float:
            return nll_of_probs(softmax(z / math.exp(log_t)), labels)

        lo, hi = LOG_T_RANGE
        x1 = hi - _GOLDEN * (hi - lo)
        x2 = lo + _GOLDEN * (hi - lo)
        f1, f2 = nll_at(x1), nll_at(x2)
        for _ in range(120):
            if f1 <= f2:
                hi, x2, f2 = x2, x1, f1
                x1 = hi - _GOLDEN * (hi - lo)
                f1 = nll_at(x1)
            else:
                lo, x1, f1 = x1, x2, f2
                x2 = lo + _GOLDEN * (hi - lo)
                f2 = nll_at(x2)
        best_log_t = x1 if f1 <= f2 else x2
        t = math.exp(best_log_t)
        if nll_at(0.0) <= nll_at(best_log_t):
            t = 1.0
        return CalibrationModel(kind="temperature", temperature=t)

    if kind == "vector":
        n, c = z.shape
        scale = np.ones(c)
        shift = np.zeros(c)
        one_hot = np.zeros((n, c))
        one_hot[np.arange(n), labels] = 1.0
        best = (nll_of_probs(softmax(z), labels), scale.copy(), shift.copy())
        lr = 0.1
        for _ in range(500):
            probs = softmax(z * scale + shift)
            g = (probs - one_hot) / n
            g_scale = (g * z).sum(axis=0)
            g_shift = g.sum(axis=0)
            scale = scale - lr * g_scale
            shift = shift - lr * g_shift
            cur = nll_of_probs(softmax(z * scale + shift), labels)
            if cur < best[0]:
                best = (cur, scale.copy(), shift.copy())
        return CalibrationModel(kind="vector", scale=best[1], shift=best[2])

    raise CalibrationError(f"unknown calibration kind {kind!r}")


def abstain_filter(predictions: Sequence[Prediction], tau: float) -> AbstainResult:
    """Keep predictions with confidence >= tau; strictly below tau abstains.

    coverage + abstention_rate is exactly 1.  tau must lie in (0, 1); an
    empty prediction set is an error.
    """
    if not predictions:
        raise CalibrationError("no predictions to filter")
    if not 0.0 < tau < 1.0:
        raise CalibrationError("tau must lie strictly between 0 and 1")
    kept: list[Prediction] = []
    abstained: list[Prediction] = []
    decisions: list[AbstainDecision] = []
    for p in predictions:
        keep = not (p.confidence < tau)
        (kept if keep else abstained).append(p)
        decisions.append(
            AbstainDecision(
                sample_hash=p.sample_hash,
                confidence=p.confidence,
                threshold=tau,
                kept=keep,
            )
        )
    n = len(predictions)
    coverage = len(kept) / n
    return AbstainResult(
        kept=kept,
        abstained=abstained,
        decisions=decisions,
        coverage=coverage,
        abstention_rate=1.0 - coverage,
    )


def threshold_sweep(
    predictions: Sequence[Prediction],
    correct: Sequence[bool],
    taus: Sequence[float],
) -> list[dict]:
    """Coverage / abstention / kept-accuracy rows across thresholds."""
    if len(predictions) != len(correct):
        raise CalibrationError("one correctness flag per prediction required")
    rows = []
    for tau in taus:
        result = abstain_filter(predictions, tau)
        kept_idx = [i for i, d in enumerate(result.decisions) if d.kept]
        acc = (
            float(np.mean([1.0 if correct[i] else 0.0 for i in kept_idx]))
            if kept_idx
            else float("nan")
        )
        rows.append(
            {
                "tau": float(tau),
                "coverage": result.coverage,
                "abstention_rate": result.abstention_rate,
                "kept_accuracy": acc,
                "abstain_all": not kept_idx,
            }
        )
    return rows


def save_calibration(model: CalibrationModel, path: str) -> None:
    doc = {
        "kind": model.kind,
        "temperature": model.temperature,
        "scale": None if model.scale is None else [float(v) for v in model.scale],
        "shift": None if model.shift is None else [float(v) for v in model.shift],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


def load_calibration(path: str) -> CalibrationModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return CalibrationModel(
        kind=doc["kind"],
        temperature=float(doc["temperature"]),
        scale=None if doc["scale"] is None else np.asarray(doc["scale"], dtype=np.float64),
        shift=None if doc["shift"] is None else np.asarray(doc["shift"], dtype=np.float64),
    )
