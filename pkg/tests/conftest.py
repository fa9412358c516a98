"""Shared fixtures and independent oracle helpers.

The oracles here are deliberately naive re-derivations (explicit loops,
scipy/sklearn calls) so that agreement with the package is evidence, not
tautology.
"""
from __future__ import annotations

import math

import numpy as np
import pytest

from mmra import dataset as ds_mod
from mmra import numerics


# ---------------------------------------------------------------------------
# Independent finite-difference oracle
# ---------------------------------------------------------------------------

def fd_stack_grads(layers, loss_fn, h: float = 1e-5):
    """Central finite differences of loss_fn over every W and b entry.

    loss_fn takes the (mutated in place, then restored) layer list and
    returns a float.  Returns [(dW, db), ...] matching the stack order.
    """
    out = []
    for layer in layers:
        grads = []
        for arr in (layer.W, layer.b):
            g = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + h
                up = loss_fn(layers)
                arr[idx] = orig - h
                down = loss_fn(layers)
                arr[idx] = orig
                g[idx] = (up - down) / (2.0 * h)
            grads.append(g)
        out.append(tuple(grads))
    return out


def fd_array_grad(x: np.ndarray, loss_fn, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of loss_fn over every entry of x."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        up = loss_fn(x)
        x[idx] = orig - h
        down = loss_fn(x)
        x[idx] = orig
        g[idx] = (up - down) / (2.0 * h)
    return g


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    f = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(f)))
    return float(np.max(np.abs(a - f) / denom)) if a.size else 0.0


# ---------------------------------------------------------------------------
# Naive supervised-contrastive oracle (explicit double loop)
# ---------------------------------------------------------------------------

def supcon_brute_force(batch_z, labels, temperature: float) -> float:
    z = np.asarray(batch_z, dtype=np.float64)
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    zh = z / norms
    n = z.shape[0]
    per_anchor = []
    for i in range(n):
        positives = [p for p in range(n) if p != i and labels[p] == labels[i]]
        if not positives:
            continue
        li = 0.0
        for p in positives:
            num = math.exp(float(zh[i] @ zh[p]) / temperature)
            den = sum(
                math.exp(float(zh[i] @ zh[a]) / temperature)
                for a in range(n)
                if a != i
            )
            li += -math.log(num / den)
        per_anchor.append(li / len(positives))
    return sum(per_anchor) / len(per_anchor) if per_anchor else 0.0


# ---------------------------------------------------------------------------
# Naive binned-calibration-error oracle
# ---------------------------------------------------------------------------

def ece_hand_binned(confidences, correct, num_bins: int = 15) -> float:
    buckets: list[list[tuple[float, bool]]] = [[] for _ in range(num_bins)]
    for c, k in zip(confidences, correct):
        idx = math.ceil(c * num_bins) - 1
        idx = min(max(idx, 0), num_bins - 1)
        buckets[idx].append((float(c), bool(k)))
    n = len(list(confidences))
    total = 0.0
    for bucket in buckets:
        if not bucket:
            continue
        mean_conf = sum(c for c, _ in bucket) / len(bucket)
        acc = sum(1 for _, k in bucket if k) / len(bucket)
        total += (len(bucket) / n) * abs(acc - mean_conf)
    return total


# ---------------------------------------------------------------------------
# Sign-enumeration Wilcoxon oracle (2^n outcomes, mid-ranks)
# ---------------------------------------------------------------------------

def _midranks_naive(values):
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def wilcoxon_enumeration(x, y) -> tuple[float, float]:
    """(w_plus, two-sided exact p) by enumerating all 2^n sign vectors."""
    import itertools

    d = [float(a) - float(b) for a, b in zip(x, y) if a != b]
    n = len(d)
    ranks = _midranks_naive([abs(v) for v in d])
    w_obs = sum(r for v, r in zip(d, ranks) if v > 0)
    sums = [
        sum(r for bit, r in zip(bits, ranks) if bit)
        for bits in itertools.product((0, 1), repeat=n)
    ]
    total = float(len(sums))
    eps = 1e-9
    p_le = sum(1 for s in sums if s <= w_obs + eps) / total
    p_ge = sum(1 for s in sums if s >= w_obs - eps) / total
    return w_obs, min(1.0, 2.0 * min(p_le, p_ge))


# ---------------------------------------------------------------------------
# Shared synthetic fixtures
# ---------------------------------------------------------------------------

@pytest.fixture
def tiny_synth() -> ds_mod.SynthConfig:
    return ds_mod.SynthConfig(
        families=("Benign", "Ryuk", "WannaCry"),
        samples_per_family=30,
        static=ds_mod.ModalitySynthSpec(dim=6, separation=4.0),
        dynamic=ds_mod.ModalitySynthSpec(dim=5, separation=4.0),
        network=ds_mod.ModalitySynthSpec(dim=4, separation=4.0),
        noise_scale=0.5,
        center_seed=7,
    )


@pytest.fixture
def tiny_aligned(tiny_synth) -> ds_mod.AlignedDataset:
    static, dynamic, network = ds_mod.synth_generate(tiny_synth, seed=11)
    ds = ds_mod.align_modalities(static, dynamic, network)
    return ds_mod.split_grouped(ds, (0.7, 0.15, 0.15), seed=3)


def random_stack(rng: np.random.Generator, dims, final_activation="linear"):
    return numerics.init_layers(
        dims, rng, hidden_activation="relu", final_activation=final_activation
    )
