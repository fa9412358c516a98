"""Dense-layer numeric kernels with exact, checkable gradients.

Everything here is float64 and pure: outputs depend only on explicit
inputs, reductions use a fixed summation order, and no global state is
consulted.  Training loops built on these kernels are therefore bit
reproducible for a fixed seed.  Inputs may be single vectors ``(d,)`` or
row-major batches ``(n, d)``; outputs match the input arity.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

ACTIVATIONS = ("relu", "linear")

# Bump when the on-disk parameter layout changes.
PARAM_FORMAT_VERSION = 1

PROB_FLOOR = 1e-12


class NonFiniteGradientError(RuntimeError):
    """A gradient update would write NaN or Inf into a layer."""

    def __init__(self, layer_index: int, which: str) -> None:
        self.layer_index = layer_index
        self.which = which
        super().__init__(
            f"non-finite gradient entry for layer {layer_index} ({which}); epoch must abort"
        )


@dataclass
class DenseLayer:
    """Affine map ``act(x @ W.T + b)`` with ``W`` of shape (out_dim, in_dim)."""

    W: np.ndarray
    b: np.ndarray
    activation: str = "linear"

    def __post_init__(self) -> None:
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2:
            raise ValueError(f"W must be 2-D, got shape {self.W.shape}")
        if self.b.ndim != 1 or self.b.shape[0] != self.W.shape[0]:
            raise ValueError(
                f"b must be 1-D with length {self.W.shape[0]}, got shape {self.b.shape}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not np.isfinite(self.W).all() or not np.isfinite(self.b).all():
            raise ValueError("layer parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]


@dataclass
class LayerGrads:
    """Parameter gradients for one DenseLayer."""

    dW: np.ndarray
    db: np.ndarray


@dataclass
class ForwardCache:
    """Per-layer inputs and pre-activations retained for the backward pass."""

    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    output: np.ndarray


@dataclass
class GradCheckReport:
    """Outcome of an analytic-vs-finite-difference gradient comparison."""

    max_rel_error: float
    worst: tuple[int, str, tuple[int, ...]] | None
    n_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def stack_dims(layers: Sequence[DenseLayer]) -> list[int]:
    """Widths traversed by the stack, input dim first."""
    if not layers:
        return []
    dims = [layers[0].in_dim]
    for layer in layers:
        dims.append(layer.out_dim)
    return dims


def init_layers(
    dims: Sequence[int],
    rng: np.random.Generator,
    hidden_activation: str = "relu",
    final_activation: str = "linear",
) -> list[DenseLayer]:
    """Build a stack of len(dims)-1 affine layers with He/Xavier init.

    ``dims`` lists widths including the input width; hidden layers use
    ``hidden_activation`` and the last layer ``final_activation``.
    """
    if len(dims) < 2:
        raise ValueError("need at least an input and an output width")
    layers: list[DenseLayer] = []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        act = final_activation if i == len(dims) - 2 else hidden_activation
        scale = math.sqrt(2.0 / fan_in) if act == "relu" else math.sqrt(1.0 / fan_in)
        W = rng.normal(0.0, scale, size=(fan_out, fan_in))
        b = np.zeros(fan_out)
        layers.append(DenseLayer(W=W, b=b, activation=act))
    return layers


def _promote(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise ValueError(f"expected a vector or a batch of rows, got shape {x.shape}")


def forward_stack(
    layers: Sequence[DenseLayer], x: np.ndarray
) -> tuple[np.ndarray, ForwardCache]:
    """Run ``x`` through the stack, returning output and cached activations."""
    a, single = _promote(x)
    if layers and a.shape[1] != layers[0].in_dim:
        raise ValueError(
            f"input width {a.shape[1]} does not match first layer in_dim {layers[0].in_dim}"
        )
    inputs: list[np.ndarray] = []
    preacts: list[np.ndarray] = []
    for layer in layers:
        inputs.append(a)
        s = a @ layer.W.T + layer.b
        preacts.append(s)
        a = np.maximum(s, 0.0) if layer.activation == "relu" else s
    out = a[0] if single else a
    return out, ForwardCache(inputs=inputs, preacts=preacts, output=out)


def backward_stack(
    layers: Sequence[DenseLayer],
    cache: ForwardCache,
    grad_output: np.ndarray,
) -> tuple[list[LayerGrads], np.ndarray]:
    """Exact gradients for every parameter plus the gradient w.r.t. the input."""
    g, single = _promote(grad_output)
    grads: list[LayerGrads] = [None] * len(layers)  # type: ignore[list-item]
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        s = cache.preacts[i]
        ds = g * (s > 0.0) if layer.activation == "relu" else g
        grads[i] = LayerGrads(dW=ds.T @ cache.inputs[i], db=ds.sum(axis=0))
        g = ds @ layer.W
    return grads, (g[0] if single else g)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-shifted softmax over the last axis; rows sum to 1 within 1e-12."""
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def weighted_cross_entropy(
    probs: np.ndarray, true_class: int, class_weights: np.ndarray
) -> float:
    """-w_y * ln(p_y) with the probability floored at 1e-12."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("expected a single probability vector")
    if not 0 <= true_class < p.shape[0]:
        raise ValueError(f"true_class {true_class} out of range for {p.shape[0]} classes")
    w = np.asarray(class_weights, dtype=np.float64)
    return float(-w[true_class] * math.log(max(p[true_class], PROB_FLOOR)))


def sgd_step(
    layers: Sequence[DenseLayer],
    grads: Sequence[LayerGrads],
    lr: float,
    weight_decay: float = 0.0,
) -> list[DenseLayer]:
    """One decoupled-L2 SGD update: p <- p - lr * (g + wd * p).

    Pure: returns fresh layers.  Raises NonFiniteGradientError naming the
    offending layer if any gradient entry is NaN/Inf.
    """
    if len(layers) != len(grads):
        raise ValueError("one gradient per layer required")
    updated: list[DenseLayer] = []
    for i, (layer, g) in enumerate(zip(layers, grads)):
        if not np.isfinite(g.dW).all():
            raise NonFiniteGradientError(i, "W")
        if not np.isfinite(g.db).all():
            raise NonFiniteGradientError(i, "b")
        W = layer.W - lr * (g.dW + weight_decay * layer.W)
        b = layer.b - lr * (g.db + weight_decay * layer.b)
        updated.append(DenseLayer(W=W, b=b, activation=layer.activation))
    return updated


LossFn = Callable[[Sequence[DenseLayer], np.ndarray], tuple[float, Sequence[LayerGrads]]]


def grad_check(
    layers: Sequence[DenseLayer],
    loss_fn: LossFn,
    x: np.ndarray,
    tolerance: float = 1e-4,
    h: float = 1e-5,
) -> GradCheckReport:
    """Compare analytic parameter gradients against central finite differences.

    ``loss_fn(layers, x)`` must return the scalar loss and one LayerGrads per
    layer.  Every parameter entry is perturbed by +/-h; the report carries the
    max relative error and the coordinates of the worst entry.  A model with
    no parameters passes vacuously.
    """
    _, analytic = loss_fn(layers, x)
    max_err = 0.0
    worst: tuple[int, str, tuple[int, ...]] | None = None
    n_checked = 0
    for li, layer in enumerate(layers):
        for name in ("W", "b"):
            arr = getattr(layer, name)
            ana = analytic[li].dW if name == "W" else analytic[li].db
            it = np.nditer(arr, flags=["multi_index"])
            while not it.finished:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + h
                lp, _ = loss_fn(layers, x)
                arr[idx] = orig - h
                lm, _ = loss_fn(layers, x)
                arr[idx] = orig
                numeric = (lp - lm) / (2.0 * h)
                a = float(ana[idx])
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                n_checked += 1
                if rel > max_err:
                    max_err = rel
                    worst = (li, name, idx)
                it.iternext()
    return GradCheckReport(
        max_rel_error=max_err, worst=worst, n_checked=n_checked, tolerance=tolerance
    )


def params_checksum(layer_stacks: Sequence[Sequence[DenseLayer]]) -> str:
    """Hex digest over all parameter bytes, order-sensitive.

    Used to prove that advisory components never touch model weights.
    """
    import hashlib

    digest = hashlib.sha256()
    for stack in layer_stacks:
        for layer in stack:
            digest.update(np.ascontiguousarray(layer.W).tobytes())
            digest.update(np.ascontiguousarray(layer.b).tobytes())
            digest.update(layer.activation.encode("utf-8"))
    return digest.hexdigest()


def save_layers(path: str, stacks: dict[str, Sequence[DenseLayer]], meta: dict | None = None) -> None:
    """Serialize named layer stacks plus a JSON manifest into one .npz file.

    Layout: arrays ``{stack}__{i}__W`` / ``{stack}__{i}__b`` and a manifest
    string recording the format version, stack order, per-layer activations
    and arbitrary caller metadata.  Round-trips float64 exactly.
    """
    arrays: dict[str, np.ndarray] = {}
    manifest: dict = {
        "format_version": PARAM_FORMAT_VERSION,
        "stacks": {},
        "meta": meta or {},
    }
    for name, layers in stacks.items():
        manifest["stacks"][name] = {
            "n_layers": len(layers),
            "activations": [l.activation for l in layers],
            "dims": stack_dims(layers),
        }
        for i, layer in enumerate(layers):
            arrays[f"{name}__{i}__W"] = layer.W
            arrays[f"{name}__{i}__b"] = layer.b
    arrays["__manifest__"] = np.frombuffer(
        json.dumps(manifest, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    np.savez(path, **arrays)


def load_layers(path: str) -> tuple[dict[str, list[DenseLayer]], dict]:
    """Inverse of save_layers; validates the format version and shapes."""
    with np.load(path) as data:
        manifest = json.loads(bytes(data["__manifest__"]).decode("utf-8"))
        version = manifest.get("format_version")
        if version != PARAM_FORMAT_VERSION:
            raise ValueError(
                f"parameter file version {version} not supported (expected {PARAM_FORMAT_VERSION})"
            )
        stacks: dict[str, list[DenseLayer]] = {}
        for name, info in manifest["stacks"].items():
            layers = []
            for i in range(info["n_layers"]):
                layers.append(
                    DenseLayer(
                        W=data[f"{name}__{i}__W"],
                        b=data[f"{name}__{i}__b"],
                        activation=info["activations"][i],
                    )
                )
            dims = stack_dims(layers)
            if dims != info["dims"]:
                raise ValueError(f"shape manifest mismatch for stack {name!r}")
            stacks[name] = layers
    return stacks, manifest["meta"]
