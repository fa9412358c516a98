"""Gated concatenation of per-modality latents into one fused vector.

The fused layout is fixed: static block, then dynamic, then network.  A
missing modality keeps its block as zeros and its gate False, so the fused
width never varies for a given latent-dimension triple (e.g. 128+32+32 ->
192).  Gates are binary presence flags; a learned scalar gate can be
switched on in the classifier, not here.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import LabelConflictError, oversample_to_balance
from .dcae import LatentEmbedding

MODALITY_ORDER = ("static", "dynamic", "network")


class FusionError(ValueError):
    """Invalid fusion request (e.g. every modality absent)."""


@dataclass
class AlignedLatents:
    sample_hash: str
    family: str
    static: np.ndarray | None
    dynamic: np.ndarray | None
    network: np.ndarray | None

    def get(self, modality: str) -> np.ndarray | None:
        return getattr(self, modality)


@dataclass
class FusedSample:
    sample_hash: str
    family: str
    z_fused: np.ndarray
    gate: tuple[bool, bool, bool]
    gate_scale: tuple[float, float, float]


def align_latents(
    static: Sequence[LatentEmbedding],
    dynamic: Sequence[LatentEmbedding],
    network: Sequence[LatentEmbedding],
    balance_to: int | None = None,
    seed: int = 0,
) -> list[AlignedLatents]:
    """Outer-join latent streams on sample_hash, first-seen order.

    A hash carrying two family labels raises LabelConflictError; an entirely
    empty join raises FusionError.  ``balance_to`` optionally oversamples
    each family's triples to that count (delegating to the dataset balancer).
    """
    order: list[str] = []
    label: dict[str, str] = {}
    slots: dict[str, dict[str, np.ndarray]] = {m: {} for m in MODALITY_ORDER}
    for m, stream in zip(MODALITY_ORDER, (static, dynamic, network)):
        for emb in stream:
            h = emb.sample_hash
            if h not in label:
                label[h] = emb.family
                order.append(h)
            elif label[h] != emb.family:
                raise LabelConflictError(h, label[h], emb.family)
            slots[m][h] = np.asarray(emb.z, dtype=np.float64)
    if not order:
        raise FusionError("empty join: no latents supplied")
    triples = [
        AlignedLatents(
            sample_hash=h,
            family=label[h],
            static=slots["static"].get(h),
            dynamic=slots["dynamic"].get(h),
            network=slots["network"].get(h),
        )
        for h in order
    ]
    if balance_to is not None:
        triples = oversample_to_balance(triples, balance_to, seed, lambda t: t.family)
    return triples


def fuse_vectors(
    z_static: np.ndarray | None,
    z_dynamic: np.ndarray | None,
    z_network: np.ndarray | None,
    dims: tuple[int, int, int],
) -> tuple[np.ndarray, tuple[bool, bool, bool], tuple[float, float, float]]:
    """Concatenate gated blocks; absent blocks are zero-filled.

    Raises FusionError when every gate is False — a sample with no modality
    carries no information and must not reach the classifier.
    """
    parts: list[np.ndarray] = []
    gates: list[bool] = []
    scales: list[float] = []
    for z, d in zip((z_static, z_dynamic, z_network), dims):
        if z is None:
            parts.append(np.zeros(d))
            gates.append(False)
            scales.append(0.0)
        else:
            z = np.asarray(z, dtype=np.float64)
            if z.shape != (d,):
                raise FusionError(f"latent block has shape {z.shape}, expected ({d},)")
            parts.append(z)
            gates.append(True)
            scales.append(1.0)
    if not any(gates):
        raise FusionError("all modality gates are False; nothing to fuse")
    return np.concatenate(parts), tuple(gates), tuple(scales)  # type: ignore[return-value]


def fuse_triples(
    triples: Sequence[AlignedLatents], dims: tuple[int, int, int]
) -> list[FusedSample]:
    fused = []
    for t in triples:
        z, gate, scale = fuse_vectors(t.static, t.dynamic, t.network, dims)
        fused.append(
            FusedSample(
                sample_hash=t.sample_hash,
                family=t.family,
                z_fused=z,
                gate=gate,
                gate_scale=scale,
            )
        )
    return fused


def fused_matrix(
    fused: Sequence[FusedSample],
) -> tuple[np.ndarray, list[str], list[str]]:
    """Stack fused vectors into (X, families, hashes) preserving order."""
    if not fused:
        raise FusionError("no fused samples")
    X = np.stack([f.z_fused for f in fused])
    return X, [f.family for f in fused], [f.sample_hash for f in fused]


def export_fused_csv(fused: Sequence[FusedSample], path: str) -> None:
    """Write ``sample_hash,family,z_0..`` rows mirroring the latent schema."""
    if not fused:
        raise FusionError("nothing to export")
    k = fused[0].z_fused.shape[0]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_hash", "family"] + [f"z_{i}" for i in range(k)])
        for f in fused:
            writer.writerow([f.sample_hash, f.family] + [repr(float(v)) for v in f.z_fused])
