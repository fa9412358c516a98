"""Family classifier: an MLP head over fused latents.

Class imbalance is handled twice over — inverse-frequency class weights in
the cross-entropy, and an optional per-sample sampling distribution that a
training controller (the agent loop) can reshape between epochs.  Soft
targets blend the one-hot label with the model's own previous-epoch
probabilities.  An optional learned scalar gate per modality block sits in
front of the first layer, off by default.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .numerics import (
    DenseLayer,
    LayerGrads,
    backward_stack,
    forward_stack,
    init_layers,
    load_layers,
    save_layers,
    sgd_step,
    softmax,
)

PROB_FLOOR = 1e-12

DEFAULT_SOFT_LABEL_ALPHA = 0.1


@dataclass
class Prediction:
    sample_hash: str
    probs: np.ndarray
    predicted: int
    confidence: float


@dataclass
class ClassifierModel:
    layers: list[DenseLayer]
    family_vocabulary: tuple[str, ...]
    class_weights: np.ndarray
    # Learned per-modality gate: raw parameters, mapped through a sigmoid so
    # effective scales stay inside [0, 1].  None means plain binary gating
    # upstream and no gate here.
    gate_params: np.ndarray | None = None
    gate_blocks: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.layers[-1].out_dim != len(self.family_vocabulary):
            raise ValueError("final layer width must equal the number of families")
        self.class_weights = np.asarray(self.class_weights, dtype=np.float64)
        if self.class_weights.shape != (len(self.family_vocabulary),):
            raise ValueError("one class weight per family required")
        if (self.gate_params is None) != (self.gate_blocks is None):
            raise ValueError("gate_params and gate_blocks go together")
        if self.gate_blocks is not None and sum(self.gate_blocks) != self.layers[0].in_dim:
            raise ValueError("gate blocks must tile the input width")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    def gate_scales(self) -> np.ndarray | None:
        if self.gate_params is None:
            return None
        return 1.0 / (1.0 + np.exp(-self.gate_params))


@dataclass
class TrainClassifierConfig:
    epochs: int
    batch_size: int = 32
    lr: float = 0.05
    seed: int = 0
    weight_decay: float = 0.0
    sampling_weights: np.ndarray | None = None
    soft_labels: bool = False
    soft_label_alpha: float = DEFAULT_SOFT_LABEL_ALPHA


def default_hidden_dims(input_dim: int) -> tuple[int, int]:
    """Two-thirds / one-third taper; 192 inputs give the (128, 64) head."""
    return (max(16, (2 * input_dim) // 3), max(8, input_dim // 3))


def new_classifier(
    input_dim: int,
    family_vocabulary: Sequence[str],
    class_weights: Sequence[float] | None = None,
    hidden_dims: Sequence[int] | None = None,
    seed: int = 0,
    learned_gate_blocks: Sequence[int] | None = None,
) -> ClassifierModel:
    vocab = tuple(family_vocabulary)
    if len(vocab) < 2:
        raise ValueError("need at least two families")
    hidden = tuple(hidden_dims) if hidden_dims is not None else default_hidden_dims(input_dim)
    rng = np.random.default_rng(seed)
    layers = init_layers([input_dim, *hidden, len(vocab)], rng)
    weights = (
        np.ones(len(vocab))
        if class_weights is None
        else np.asarray(list(class_weights), dtype=np.float64)
    )
    gate_params = None
    gate_blocks = None
    if learned_gate_blocks is not None:
        gate_blocks = tuple(int(b) for b in learned_gate_blocks)
        # sigmoid(4) ~ 0.982: start with the gate essentially open.
        gate_params = np.full(len(gate_blocks), 4.0)
    return ClassifierModel(
        layers=layers,
        family_vocabulary=vocab,
        class_weights=weights,
        gate_params=gate_params,
        gate_blocks=gate_blocks,
    )


def _apply_gate(model: ClassifierModel, X: np.ndarray) -> np.ndarray:
    scales = model.gate_scales()
    if scales is None:
        return X
    expanded = np.concatenate(
        [np.full(b, scales[i]) for i, b in enumerate(model.gate_blocks or ())]
    )
    return X * expanded


def logits_of(model: ClassifierModel, X: np.ndarray) -> np.ndarray:
    out, _ = forward_stack(model.layers, _apply_gate(model, np.asarray(X, dtype=np.float64)))
    return out


def classify(model: ClassifierModel, z_fused: np.ndarray, sample_hash: str = "") -> Prediction:
    """Softmax over logits; ties in argmax break toward the lowest index."""
    probs = softmax(logits_of(model, z_fused))
    idx = int(np.argmax(probs))
    return Prediction(sample_hash=sample_hash, probs=probs, predicted=idx, confidence=float(probs[idx]))


def classify_batch(
    model: ClassifierModel, X: np.ndarray, sample_hashes: Sequence[str] | None = None
) -> list[Prediction]:
    probs = softmax(logits_of(model, X))
    hashes = sample_hashes if sample_hashes is not None else [""] * probs.shape[0]
    out = []
    for i in range(probs.shape[0]):
        idx = int(np.argmax(probs[i]))
        out.append(
            Prediction(
                sample_hash=hashes[i],
                probs=probs[i],
                predicted=idx,
                confidence=float(probs[i, idx]),
            )
        )
    return out


def batch_loss_and_grads(
    model: ClassifierModel,
    X: np.ndarray,
    y: np.ndarray,
    targets: np.ndarray | None = None,
) -> tuple[float, list[LayerGrads], np.ndarray | None]:
    """Mean weighted cross-entropy over a batch, with exact gradients.

    loss = (1/B) * sum_i w_{y_i} * (-sum_c t_ic ln p_ic); ``targets`` defaults
    to one-hot rows of ``y``.  Also returns the gradient for the learned gate
    parameters when the model has one.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    b = X.shape[0]
    c = len(model.family_vocabulary)
    if targets is None:
        targets = np.zeros((b, c))
        targets[np.arange(b), y] = 1.0
    gated = _apply_gate(model, X)
    logits, cache = forward_stack(model.layers, gated)
    probs = softmax(logits)
    w = model.class_weights[y]
    loss = float(
        (w * -(targets * np.log(np.maximum(probs, PROB_FLOOR))).sum(axis=1)).mean()
    )
    d_logits = (w[:, None] * (probs - targets)) / b
    grads, d_input = backward_stack(model.layers, cache, d_logits)
    d_gate = None
    if model.gate_params is not None and model.gate_blocks is not None:
        scales = model.gate_scales()
        d_gate = np.zeros_like(model.gate_params)
        start = 0
        for i, width in enumerate(model.gate_blocks):
            block = slice(start, start + width)
            d_scale = float((d_input[:, block] * X[:, block]).sum())
            d_gate[i] = d_scale * scales[i] * (1.0 - scales[i])
            start += width
    return loss, grads, d_gate


def _epoch_batches(
    n: int,
    batch_size: int,
    rng: np.random.Generator,
    sampling_weights: np.ndarray | None,
) -> list[np.ndarray]:
    """Index batches for one epoch.

    Uniform (None or all-equal) weights reduce to a plain shuffled partition;
    otherwise n draws with replacement from the normalized distribution.  A
    class given weight zero is simply never drawn that epoch.
    """
    if sampling_weights is not None:
        w = np.asarray(sampling_weights, dtype=np.float64)
        if w.shape != (n,):
            raise ValueError(f"sampling_weights must have shape ({n},)")
        if (w < 0).any():
            raise ValueError("sampling weights must be non-negative")
        total = w.sum()
        if total <= 0:
            raise ValueError("sampling weights sum to zero")
        if np.ptp(w) == 0.0:
            sampling_weights = None
        else:
            idx = rng.choice(n, size=n, replace=True, p=w / total)
            return [idx[s : s + batch_size] for s in range(0, n, batch_size)]
    perm = rng.permutation(n)
    return [perm[s : s + batch_size] for s in range(0, n, batch_size)]


def train_epoch(
    model: ClassifierModel,
    X: np.ndarray,
    y: np.ndarray,
    lr: float,
    batch_size: int,
    rng: np.random.Generator,
    weight_decay: float = 0.0,
    sampling_weights: np.ndarray | None = None,
    soft_targets: np.ndarray | None = None,
    sample_hashes: Sequence[str] | None = None,
    audit: set[str] | None = None,
) -> tuple[ClassifierModel, float]:
    """One SGD epoch; returns the updated model and its mean batch loss."""
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    if audit is not None and sample_hashes is None:
        raise ValueError("audit requires sample_hashes")
    losses = []
    for idx in _epoch_batches(n, min(batch_size, n), rng, sampling_weights):
        if idx.shape[0] == 0:
            continue
        targets = soft_targets[idx] if soft_targets is not None else None
        loss, grads, d_gate = batch_loss_and_grads(model, X[idx], y[idx], targets)
        if not math.isfinite(loss):
            raise ValueError("non-finite classifier loss")
        layers = sgd_step(model.layers, grads, lr, weight_decay)
        gate_params = model.gate_params
        if d_gate is not None and gate_params is not None:
            gate_params = gate_params - lr * d_gate
        model = replace(model, layers=layers, gate_params=gate_params)
        losses.append(loss)
        if audit is not None and sample_hashes is not None:
            audit.update(sample_hashes[i] for i in idx)
    return model, float(np.mean(losses)) if losses else 0.0


def soft_targets_from_probs(
    y: np.ndarray, prev_probs: np.ndarray, alpha: float
) -> np.ndarray:
    """(1 - alpha) * one_hot + alpha * previous-epoch probabilities."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    b, c = prev_probs.shape
    one_hot = np.zeros((b, c))
    one_hot[np.arange(b), np.asarray(y, dtype=np.int64)] = 1.0
    return (1.0 - alpha) * one_hot + alpha * prev_probs


def train_classifier(
    model: ClassifierModel,
    X: np.ndarray,
    families: Sequence[str],
    config: TrainClassifierConfig,
    sample_hashes: Sequence[str] | None = None,
    audit: set[str] | None = None,
) -> tuple[ClassifierModel, list[float]]:
    """Standalone multi-epoch training loop, deterministic for a fixed seed."""
    vocab_index = {f: i for i, f in enumerate(model.family_vocabulary)}
    unknown = set(families) - set(vocab_index)
    if unknown:
        raise ValueError(f"families outside the model vocabulary: {sorted(unknown)}")
    y = np.asarray([vocab_index[f] for f in families], dtype=np.int64)
    X = np.asarray(X, dtype=np.float64)
    rng = np.random.default_rng(config.seed)
    trace: list[float] = []
    prev_probs: np.ndarray | None = None
    for _epoch in range(config.epochs):
        soft = None
        if config.soft_labels:
            if prev_probs is None:
                prev_probs = softmax(logits_of(model, X))
            soft = soft_targets_from_probs(y, prev_probs, config.soft_label_alpha)
        model, loss = train_epoch(
            model,
            X,
            y,
            lr=config.lr,
            batch_size=config.batch_size,
            rng=rng,
            weight_decay=config.weight_decay,
            sampling_weights=config.sampling_weights,
            soft_targets=soft,
            sample_hashes=sample_hashes,
            audit=audit,
        )
        trace.append(loss)
        if config.soft_labels:
            prev_probs = softmax(logits_of(model, X))
    return model, trace


def evaluate(
    model: ClassifierModel,
    X: np.ndarray,
    families: Sequence[str],
    sample_hashes: Sequence[str] | None = None,
    probs: np.ndarray | None = None,
) -> tuple[list[Prediction], np.ndarray]:
    """Predictions plus a confusion matrix with rows indexed by true class.

    ``probs`` overrides the model's own probabilities (used to evaluate
    calibrated outputs without retouching the model).
    """
    vocab_index = {f: i for i, f in enumerate(model.family_vocabulary)}
    y = [vocab_index[f] for f in families]
    if probs is None:
        preds = classify_batch(model, X, sample_hashes)
    else:
        hashes = sample_hashes if sample_hashes is not None else [""] * probs.shape[0]
        preds = []
        for i in range(probs.shape[0]):
            idx = int(np.argmax(probs[i]))
            preds.append(
                Prediction(
                    sample_hash=hashes[i],
                    probs=probs[i],
                    predicted=idx,
                    confidence=float(probs[i, idx]),
                )
            )
    c = len(model.family_vocabulary)
    confusion = np.zeros((c, c), dtype=np.int64)
    for truth, pred in zip(y, preds):
        confusion[truth, pred.predicted] += 1
    return preds, confusion


def export_predictions_csv(
    predictions: Sequence[Prediction],
    true_families: Sequence[str],
    vocabulary: Sequence[str],
    path: str,
) -> None:
    """Dump ``sample_hash,true_family,predicted_family,confidence,p_0..``."""
    if len(predictions) != len(true_families):
        raise ValueError("one true family per prediction required")
    c = len(vocabulary)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["sample_hash", "true_family", "predicted_family", "confidence"]
            + [f"p_{i}" for i in range(c)]
        )
        for pred, truth in zip(predictions, true_families):
            writer.writerow(
                [pred.sample_hash, truth, vocabulary[pred.predicted], repr(pred.confidence)]
                + [repr(float(p)) for p in pred.probs]
            )


def save_classifier(model: ClassifierModel, path: str) -> None:
    meta = {
        "family_vocabulary": list(model.family_vocabulary),
        "class_weights": [float(w) for w in model.class_weights],
        "gate_params": None
        if model.gate_params is None
        else [float(g) for g in model.gate_params],
        "gate_blocks": None if model.gate_blocks is None else list(model.gate_blocks),
    }
    save_layers(path, {"mlp": model.layers}, meta=meta)


def load_classifier(path: str) -> ClassifierModel:
    stacks, meta = load_layers(path)
    return ClassifierModel(
        layers=stacks["mlp"],
        family_vocabulary=tuple(meta["family_vocabulary"]),
        class_weights=np.asarray(meta["class_weights"], dtype=np.float64),
        gate_params=None
        if meta["gate_params"] is None
        else np.asarray(meta["gate_params"], dtype=np.float64),
        gate_blocks=None if meta["gate_blocks"] is None else tuple(meta["gate_blocks"]),
    )
