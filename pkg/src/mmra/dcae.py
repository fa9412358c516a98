"""Modality-specific deep contrastive autoencoders.

Each model pairs a symmetric encoder/decoder with a supervised contrastive
term on the latent code: total loss = squared reconstruction error plus
lambda times a label-aware contrastive loss over L2-normalized latents.
Training is plain mini-batch SGD on float64 kernels, bit reproducible for
a fixed seed.
"""

from __future__ import annotations

import csv
import math
import warnings
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
    stack_dims,
)

DEFAULT_LAMBDA = 1.0
DEFAULT_TEMPERATURE = 0.5

ZERO_NORM_EPS = 1e-8

# Encoder ladders for the reference feature widths; anything else gets a
# geometric-mean rung between input and latent.
PRESET_ENCODERS: dict[int, tuple[int, ...]] = {
    1901: (1024, 512, 256, 128),
    77: (64, 48, 32),
    87: (64, 48, 32),
}


@dataclass
class DcaeModel:
    modality: str
    encoder: list[DenseLayer]
    decoder: list[DenseLayer]
    latent_dim: int
    lam: float = DEFAULT_LAMBDA
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self) -> None:
        enc_dims = stack_dims(self.encoder)
        dec_dims = stack_dims(self.decoder)
        if dec_dims != list(reversed(enc_dims)):
            raise ValueError(
                f"decoder dims {dec_dims} must mirror encoder dims {enc_dims}"
            )
        if enc_dims[-1] != self.latent_dim:
            raise ValueError("encoder output width must equal latent_dim")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")

    @property
    def feature_dim(self) -> int:
        return self.encoder[0].in_dim


@dataclass
class DcaeTrainConfig:
    epochs: int
    batch_size: int = 32
    lr: float = 0.005
    seed: int = 0
    weight_decay: float = 0.0
    # Global gradient-norm cap.  Degenerate batches (a dead-ReLU latent is
    # perturbed off zero norm) otherwise produce a single step large enough
    # to rescale the whole encoder; None disables.
    max_grad_norm: float | None = 100.0


@dataclass
class LatentEmbedding:
    sample_hash: str
    modality: str
    family: str
    z: np.ndarray


def default_encoder_dims(feature_dim: int, latent_dim: int | None) -> list[int]:
    """Dims including input and latent widths for a given feature width."""
    if feature_dim in PRESET_ENCODERS:
        ladder = PRESET_ENCODERS[feature_dim]
        if latent_dim is not None and latent_dim != ladder[-1]:
            raise ValueError(
                f"preset for width {feature_dim} fixes latent_dim={ladder[-1]}"
            )
        return [feature_dim, *ladder]
    if latent_dim is None:
        latent_dim = max(4, min(32, feature_dim // 2))
    if latent_dim >= feature_dim:
        raise ValueError("latent_dim must be smaller than feature_dim")
    mid = int(round(math.sqrt(feature_dim * latent_dim)))
    dims = [feature_dim]
    if mid > latent_dim and mid < feature_dim:
        dims.append(mid)
    dims.append(latent_dim)
    return dims


def new_dcae(
    modality: str,
    feature_dim: int,
    latent_dim: int | None = None,
    hidden_dims: Sequence[int] | None = None,
    lam: float = DEFAULT_LAMBDA,
    temperature: float = DEFAULT_TEMPERATURE,
    seed: int = 0,
) -> DcaeModel:
    """Build a symmetric DCAE; hidden layers ReLU, latent and output linear."""
    if hidden_dims is not None:
        if latent_dim is None:
            raise ValueError("latent_dim required with explicit hidden_dims")
        enc_dims = [feature_dim, *hidden_dims, latent_dim]
    else:
        enc_dims = default_encoder_dims(feature_dim, latent_dim)
    rng = np.random.default_rng(seed)
    encoder = init_layers(enc_dims, rng)
    decoder = init_layers(list(reversed(enc_dims)), rng)
    return DcaeModel(
        modality=modality,
        encoder=encoder,
        decoder=decoder,
        latent_dim=enc_dims[-1],
        lam=lam,
        temperature=temperature,
    )


def encode(model: DcaeModel, x: np.ndarray) -> np.ndarray:
    z, _ = forward_stack(model.encoder, x)
    return z


def reconstruct(model: DcaeModel, x: np.ndarray) -> np.ndarray:
    x_hat, _ = forward_stack(model.decoder, encode(model, x))
    return x_hat


def reconstruction_loss(x: np.ndarray, x_hat: np.ndarray) -> float:
    """Squared L2 error; for batches, the mean of per-row squared errors."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    d = x - x_hat
    if d.ndim == 1:
        return float(d @ d)
    return float((d * d).sum(axis=1).mean())


def _normalize_latents(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    z = np.array(z, dtype=np.float64)
    norms = np.linalg.norm(z, axis=1)
    zero = norms == 0.0
    if zero.any():
        warnings.warn(
            f"{int(zero.sum())} zero-norm latent(s) perturbed by {ZERO_NORM_EPS}",
            RuntimeWarning,
            stacklevel=3,
        )
        z[zero] += ZERO_NORM_EPS
        norms = np.linalg.norm(z, axis=1)
    return z / norms[:, None], norms


def supcon_loss(
    batch_z: np.ndarray, labels: Sequence, temperature: float
) -> float:
    return supcon_loss_and_grad(batch_z, labels, temperature)[0]


def supcon_loss_and_grad(
    batch_z: np.ndarray, labels: Sequence, temperature: float
) -> tuple[float, np.ndarray]:
    """Supervised contrastive loss over L2-normalized latents, with gradient.

    For each anchor i with positive set P(i) (same label, excluding i):

        L_i = -(1/|P(i)|) * sum_{p in P(i)} ln( exp(s_ip) / sum_{a != i} exp(s_ia) )

    with s_ij the cosine similarity of normalized latents over
    ``temperature``; the loss is the mean of L_i over anchors that have at
    least one positive.  Anchors without positives are skipped; if none has
    a positive the loss is 0.0 with a warning.  The returned gradient is
    with respect to the raw (pre-normalization) latents.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    z = np.asarray(batch_z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValueError("need a batch of at least 2 latent vectors")
    y = np.asarray(labels)
    if y.shape[0] != z.shape[0]:
        raise ValueError("one label per latent required")

    zh, norms = _normalize_latents(z)
    n = z.shape[0]
    s = (zh @ zh.T) / temperature
    same = y[:, None] == y[None, :]
    off_diag = ~np.eye(n, dtype=bool)
    pos = same & off_diag

    anchors = pos.any(axis=1)
    if not anchors.any():
        warnings.warn("no anchor has a positive; contrastive loss is 0", RuntimeWarning, stacklevel=2)
        return 0.0, np.zeros_like(z)

    # Row-wise stabilized exponentials over the off-diagonal entries.
    s_masked = np.where(off_diag, s, -np.inf)
    row_max = s_masked.max(axis=1, keepdims=True)
    e = np.where(off_diag, np.exp(s - row_max), 0.0)
    denom = e.sum(axis=1)

    p_count = pos.sum(axis=1)
    safe_count = np.where(p_count > 0, p_count, 1)
    loss_rows = np.where(
        anchors,
        -(s * pos).sum(axis=1) / safe_count + (np.log(denom) + row_max[:, 0]),
        0.0,
    )
    n_anchors = int(anchors.sum())
    loss = float(loss_rows[anchors].mean())

    # dL/ds_ij per anchor row, zero elsewhere.
    g = np.zeros_like(s)
    ratio = e / denom[:, None]
    rows = np.where(anchors)[0]
    pos_f = pos.astype(np.float64)
    g[rows] = (-pos_f[rows] / safe_count[rows][:, None] + ratio[rows]) / n_anchors
    g *= off_diag

    # Through the similarity matrix into normalized latents, then through
    # the row normalization into raw latents.
    d_zh = (g @ zh + g.T @ zh) / temperature
    proj = (d_zh * zh).sum(axis=1, keepdims=True)
    d_z = (d_zh - proj * zh) / norms[:, None]
    return loss, d_z


def total_loss(
    x: np.ndarray,
    x_hat: np.ndarray,
    batch_z: np.ndarray,
    labels: Sequence,
    lam: float,
    temperature: float,
) -> float:
    """Reconstruction plus lambda-weighted contrastive term."""
    recon = reconstruction_loss(x, x_hat)
    if lam == 0.0:
        return recon
    return recon + lam * supcon_loss(batch_z, labels, temperature)


def _clip_gradients(
    grads_list: list[list[LayerGrads]], cap: float
) -> list[list[LayerGrads]]:
    total = 0.0
    for grads in grads_list:
        for g in grads:
            total += float((g.dW ** 2).sum() + (g.db ** 2).sum())
    norm = math.sqrt(total)
    if norm <= cap or norm == 0.0:
        return grads_list
    scale = cap / norm
    return [
        [LayerGrads(dW=g.dW * scale, db=g.db * scale) for g in grads]
        for grads in grads_list
    ]


def train_dcae(
    model: DcaeModel,
    X: np.ndarray,
    labels: Sequence,
    config: DcaeTrainConfig,
    sample_hashes: Sequence[str] | None = None,
    audit: set[str] | None = None,
) -> tuple[DcaeModel, list[float]]:
    """Mini-batch SGD on the combined loss; returns (model, per-epoch trace).

    Deterministic for a fixed seed.  Zero epochs return the model unchanged.
    A non-finite batch loss aborts training and returns the last epoch-end
    checkpoint with a warning.  When ``audit`` is given, the hashes of every
    sample that participated in an update are added to it.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(labels)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X rows and labels must align")
    if X.shape[1] != model.feature_dim:
        raise ValueError(
            f"feature width {X.shape[1]} does not match model width {model.feature_dim}"
        )
    if config.epochs < 0:
        raise ValueError("epochs must be >= 0")
    if config.epochs > 0 and model.lam > 0 and len(set(y.tolist())) < 2:
        raise ValueError("contrastive training (lambda > 0) needs at least 2 classes")
    if config.epochs == 0:
        return model, []
    if audit is not None and sample_hashes is None:
        raise ValueError("audit requires sample_hashes")

    rng = np.random.default_rng(config.seed)
    n = X.shape[0]
    batch = max(2, min(config.batch_size, n))
    encoder = [DenseLayer(l.W.copy(), l.b.copy(), l.activation) for l in model.encoder]
    decoder = [DenseLayer(l.W.copy(), l.b.copy(), l.activation) for l in model.decoder]
    checkpoint = ([l for l in encoder], [l for l in decoder])
    trace: list[float] = []

    for _epoch in range(config.epochs):
        perm = rng.permutation(n)
        batch_losses: list[float] = []
        aborted = False
        for start in range(0, n, batch):
            idx = perm[start : start + batch]
            if idx.shape[0] < 2:
                continue
            xb, yb = X[idx], y[idx]
            z, enc_cache = forward_stack(encoder, xb)
            x_hat, dec_cache = forward_stack(decoder, z)
            m = idx.shape[0]
            recon = float(((xb - x_hat) ** 2).sum(axis=1).mean())
            d_xhat = 2.0 * (x_hat - xb) / m
            dec_grads, d_z = backward_stack(decoder, dec_cache, d_xhat)
            if model.lam > 0 and len(set(yb.tolist())) >= 2:
                sup, d_z_sup = supcon_loss_and_grad(z, yb, model.temperature)
                d_z = d_z + model.lam * d_z_sup
            else:
                sup = 0.0
            loss = recon + model.lam * sup
            if not math.isfinite(loss):
                warnings.warn(
                    "non-finite training loss; restoring last epoch checkpoint",
                    RuntimeWarning,
                    stacklevel=2,
                )
                encoder, decoder = checkpoint
                aborted = True
                break
            enc_grads, _ = backward_stack(encoder, enc_cache, d_z)
            if config.max_grad_norm is not None:
                enc_grads, dec_grads = _clip_gradients(
                    [enc_grads, dec_grads], config.max_grad_norm
                )
            encoder = sgd_step(encoder, enc_grads, config.lr, config.weight_decay)
            decoder = sgd_step(decoder, dec_grads, config.lr, config.weight_decay)
            batch_losses.append(loss)
            if audit is not None and sample_hashes is not None:
                audit.update(sample_hashes[i] for i in idx)
        if aborted:
            break
        checkpoint = ([l for l in encoder], [l for l in decoder])
        trace.append(float(np.mean(batch_losses)) if batch_losses else float("nan"))

    return replace(model, encoder=encoder, decoder=decoder), trace


def embed_dataset(
    model: DcaeModel,
    sample_hashes: Sequence[str],
    families: Sequence[str],
    X: np.ndarray,
) -> list[LatentEmbedding]:
    """Encode rows in order; output order matches input order."""
    if not (len(sample_hashes) == len(families) == X.shape[0]):
        raise ValueError("hashes, families and rows must align")
    if X.shape[0] == 0:
        return []
    Z = encode(model, X)
    return [
        LatentEmbedding(sample_hash=h, modality=model.modality, family=f, z=Z[i])
        for i, (h, f) in enumerate(zip(sample_hashes, families))
    ]


def export_latents_csv(embeddings: Sequence[LatentEmbedding], path: str) -> None:
    """Write ``sample_hash,family,z_0..z_{k-1}`` rows for external plotting."""
    if not embeddings:
        raise ValueError("nothing to export")
    k = embeddings[0].z.shape[0]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_hash", "family"] + [f"z_{i}" for i in range(k)])
        for e in embeddings:
            writer.writerow([e.sample_hash, e.family] + [repr(float(v)) for v in e.z])


def save_dcae(model: DcaeModel, path: str) -> None:
    save_layers(
        path,
        {"encoder": model.encoder, "decoder": model.decoder},
        meta={
            "modality": model.modality,
            "latent_dim": model.latent_dim,
            "lam": model.lam,
            "temperature": model.temperature,
        },
    )


def load_dcae(path: str) -> DcaeModel:
    stacks, meta = load_layers(path)
    return DcaeModel(
        modality=meta["modality"],
        encoder=stacks["encoder"],
        decoder=stacks["decoder"],
        latent_dim=int(meta["latent_dim"]),
        lam=float(meta["lam"]),
        temperature=float(meta["temperature"]),
    )
