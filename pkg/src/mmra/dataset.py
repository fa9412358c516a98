"""Loading, aligning, splitting, balancing and synthesizing modality tables.

A modality table is a CSV with header ``sample_hash,family,f_0..f_{d-1}``
(UTF-8, comma separated, '.' decimals).  Three such tables — static,
dynamic and network — are joined on sample_hash into an aligned dataset
whose samples carry a per-modality availability mask.
"""

from __future__ import annotations

import csv
import math
import zlib
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence, TypeVar

import numpy as np

MODALITIES = ("static", "dynamic", "network")

SPLITS = ("train", "val", "test")

STD_FLOOR = 1e-8


class DatasetError(ValueError):
    """Malformed table, inconsistent join, or invalid split request."""


class LabelConflictError(DatasetError):
    """The same sample_hash carries different family labels."""

    def __init__(self, sample_hash: str, a: str, b: str) -> None:
        self.sample_hash = sample_hash
        super().__init__(
            f"label conflict for sample_hash {sample_hash!r}: {a!r} vs {b!r}"
        )


@dataclass
class ModalityTable:
    """One modality's feature matrix keyed by sample hash."""

    modality: str
    sample_hashes: list[str]
    families: list[str]
    features: np.ndarray
    vocabulary: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.modality not in MODALITIES:
            raise DatasetError(f"unknown modality {self.modality!r}")
        self.features = np.asarray(self.features, dtype=np.float64)
        n = len(self.sample_hashes)
        if len(self.families) != n or self.features.shape[0] != n:
            raise DatasetError("hashes, families and feature rows must align")
        if len(set(self.sample_hashes)) != n:
            raise DatasetError("duplicate sample_hash in table")
        bad = set(self.families) - set(self.vocabulary)
        if bad:
            raise DatasetError(f"families outside declared vocabulary: {sorted(bad)}")
        if n and not np.isfinite(self.features).all():
            raise DatasetError("non-finite feature values")

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass
class AlignedSample:
    sample_hash: str
    family: str
    static: np.ndarray | None
    dynamic: np.ndarray | None
    network: np.ndarray | None

    def modality_vector(self, modality: str) -> np.ndarray | None:
        return getattr(self, modality)

    @property
    def mask(self) -> tuple[bool, bool, bool]:
        return (self.static is not None, self.dynamic is not None, self.network is not None)


@dataclass
class AlignedDataset:
    """Hash-joined samples plus the label vocabulary and a split assignment."""

    samples: list[AlignedSample]
    family_vocabulary: tuple[str, ...]
    feature_dims: tuple[int | None, int | None, int | None]
    split_assignment: dict[str, str] = field(default_factory=dict)

    def in_split(self, split: str) -> list[AlignedSample]:
        if split not in SPLITS:
            raise DatasetError(f"unknown split {split!r}")
        return [s for s in self.samples if self.split_assignment.get(s.sample_hash) == split]

    def family_counts(self, samples: Sequence[AlignedSample] | None = None) -> dict[str, int]:
        counts = {f: 0 for f in self.family_vocabulary}
        for s in self.samples if samples is None else samples:
            counts[s.family] += 1
        return counts


# ---------------------------------------------------------------------------
# CSV round trip
# ---------------------------------------------------------------------------

def load_modality_csv(
    path: str, modality: str, vocabulary: Sequence[str] | None = None
) -> ModalityTable:
    """Parse one modality CSV with strict validation.

    Errors name the offending data row (0-based, not counting the header):
    missing required columns, a non-numeric or non-finite feature cell, or a
    duplicate sample_hash all raise DatasetError.  When ``vocabulary`` is
    omitted the closed label set is declared from the file itself (sorted
    unique families).
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        if len(header) < 2 or header[0] != "sample_hash" or header[1] != "family":
            raise DatasetError(
                f"{path}: header must start with sample_hash,family; got {header[:2]}"
            )
        expected = [f"f_{i}" for i in range(len(header) - 2)]
        if header[2:] != expected:
            raise DatasetError(f"{path}: feature columns must be f_0..f_{len(header) - 3}")
        dim = len(expected)
        hashes: list[str] = []
        families: list[str] = []
        rows: list[list[float]] = []
        seen: set[str] = set()
        for row_index, row in enumerate(reader):
            if len(row) != len(header):
                raise DatasetError(
                    f"{path}: row {row_index} has {len(row)} cells, expected {len(header)}"
                )
            h, fam = row[0], row[1]
            if h in seen:
                raise DatasetError(f"{path}: duplicate sample_hash {h!r} at row {row_index}")
            seen.add(h)
            values = []
            for ci, cell in enumerate(row[2:]):
                try:
                    v = float(cell)
                except ValueError:
                    raise DatasetError(
                        f"{path}: non-numeric cell {cell!r} at row {row_index}, column f_{ci}"
                    ) from None
                if not math.isfinite(v):
                    raise DatasetError(
                        f"{path}: non-finite cell {cell!r} at row {row_index}, column f_{ci}"
                    )
                values.append(v)
            hashes.append(h)
            families.append(fam)
            rows.append(values)
    vocab = tuple(vocabulary) if vocabulary is not None else tuple(sorted(set(families)))
    features = np.asarray(rows, dtype=np.float64).reshape(len(rows), dim)
    return ModalityTable(
        modality=modality,
        sample_hashes=hashes,
        families=families,
        features=features,
        vocabulary=vocab,
    )


def save_modality_csv(table: ModalityTable, path: str) -> None:
    """Write a table back to the canonical CSV schema."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_hash", "family"] + [f"f_{i}" for i in range(table.feature_dim)])
        for h, fam, row in zip(table.sample_hashes, table.families, table.features):
            writer.writerow([h, fam] + [repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# Alignment
# ---------------------------------------------------------------------------

def align_modalities(
    static: ModalityTable | None,
    dynamic: ModalityTable | None,
    network: ModalityTable | None,
) -> AlignedDataset:
    """Outer-join tables on sample_hash with strict label agreement.

    Every hash seen in any table yields one aligned sample whose missing
    modalities stay None (the availability mask).  A hash appearing with two
    different family labels raises LabelConflictError naming the hash; tables
    whose vocabularies share no label raise DatasetError.
    """
    tables = {"static": static, "dynamic": dynamic, "network": network}
    present = {m: t for m, t in tables.items() if t is not None}
    if not present:
        raise DatasetError("at least one modality table is required")
    vocabs = [set(t.vocabulary) for t in present.values()]
    if len(vocabs) > 1 and not set.intersection(*vocabs):
        raise DatasetError("modality tables share no family label; incompatible vocabularies")

    order: list[str] = []
    label: dict[str, str] = {}
    vectors: dict[str, dict[str, np.ndarray]] = {m: {} for m in present}
    for m, t in present.items():
        for h, fam, row in zip(t.sample_hashes, t.families, t.features):
            if h not in label:
                label[h] = fam
                order.append(h)
            elif label[h] != fam:
                raise LabelConflictError(h, label[h], fam)
            vectors[m][h] = row

    samples = [
        AlignedSample(
            sample_hash=h,
            family=label[h],
            static=vectors.get("static", {}).get(h),
            dynamic=vectors.get("dynamic", {}).get(h),
            network=vectors.get("network", {}).get(h),
        )
        for h in order
    ]
    vocab = tuple(sorted(set.union(*vocabs)))
    dims = tuple(t.feature_dim if t is not None else None for t in (static, dynamic, network))
    return AlignedDataset(samples=samples, family_vocabulary=vocab, feature_dims=dims)  # type: ignore[arg-type]


# ---------------------------------------------------------------------------
# Splitting, balancing, weighting
# ---------------------------------------------------------------------------

def split_grouped(
    ds: AlignedDataset, ratios: Sequence[float], seed: int
) -> AlignedDataset:
    """Stratified train/val/test assignment, deterministic in ``seed``.

    Within every family the split sizes follow largest-remainder rounding of
    ``ratios``, so each family deviates from the exact proportions by at most
    one sample.  A family with fewer samples than requested (nonzero-ratio)
    splits raises DatasetError.
    """
    ratios = [float(r) for r in ratios]
    if len(ratios) != len(SPLITS):
        raise DatasetError(f"expected {len(SPLITS)} ratios, got {len(ratios)}")
    if any(r < 0 for r in ratios):
        raise DatasetError("ratios must be non-negative")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DatasetError(f"ratios must sum to 1 within 1e-9, got {sum(ratios)}")
    requested = sum(1 for r in ratios if r > 0)

    rng = np.random.default_rng(seed)
    assignment: dict[str, str] = {}
    for family in ds.family_vocabulary:
        members = [s.sample_hash for s in ds.samples if s.family == family]
        if not members:
            continue
        m = len(members)
        if m < requested:
            raise DatasetError(
                f"family {family!r} has {m} samples, fewer than {requested} requested splits"
            )
        quotas = [m * r for r in ratios]
        base = [int(math.floor(q)) for q in quotas]
        leftover = m - sum(base)
        remainders = sorted(
            range(len(ratios)), key=lambda i: (-(quotas[i] - base[i]), i)
        )
        for i in remainders[:leftover]:
            base[i] += 1
        # Guarantee every requested split sees at least one sample so tiny
        # families cannot starve validation or test.
        for i, r in enumerate(ratios):
            if r > 0 and base[i] == 0:
                donor = max(range(len(base)), key=lambda j: (base[j], -j))
                base[donor] -= 1
                base[i] += 1
        shuffled = list(members)
        rng.shuffle(shuffled)
        cursor = 0
        for split, count in zip(SPLITS, base):
            for h in shuffled[cursor : cursor + count]:
                assignment[h] = split
            cursor += count
    return replace(ds, split_assignment=assignment)


T = TypeVar("T")


def oversample_to_balance(
    samples: Sequence[T],
    target_per_class: int,
    seed: int,
    label_fn: Callable[[T], str] = lambda s: s.family,  # type: ignore[attr-defined]
) -> list[T]:
    """Random oversampling with replacement up to ``target_per_class``.

    Classes below the target gain duplicated originals until they hit the
    target exactly; classes at or above it are left untouched.  Every
    original sample is preserved, nothing is ever dropped, and the result is
    deterministic in ``seed``.
    """
    if target_per_class < 1:
        raise DatasetError("target_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    by_class: dict[str, list[T]] = {}
    for s in samples:
        by_class.setdefault(label_fn(s), []).append(s)
    out: list[T] = list(samples)
    for label in sorted(by_class):
        members = by_class[label]
        deficit = target_per_class - len(members)
        if deficit > 0:
            picks = rng.integers(0, len(members), size=deficit)
            out.extend(members[i] for i in picks)
    return out


def inverse_frequency_weights(counts: Mapping[str, int]) -> dict[str, float]:
    """w_c = N / (C * n_c); the count-weighted mean of the weights is 1."""
    if not counts:
        raise DatasetError("empty class counts")
    if any(n <= 0 for n in counts.values()):
        raise DatasetError("every class must have a positive count")
    total = sum(counts.values())
    c = len(counts)
    return {label: total / (c * n) for label, n in counts.items()}


def standardize_features(ds: AlignedDataset) -> tuple[AlignedDataset, dict[str, dict[str, np.ndarray]]]:
    """Z-score every modality using statistics of the train split only.

    Means and stds are computed over train samples where the modality is
    present (std floored at 1e-8) and then applied to all splits, so no
    information leaks out of train.  Returns the transformed dataset and the
    per-modality statistics.
    """
    if not ds.split_assignment:
        raise DatasetError("standardize_features requires a split assignment")
    train = ds.in_split("train")
    stats: dict[str, dict[str, np.ndarray]] = {}
    for m in MODALITIES:
        rows = [s.modality_vector(m) for s in train if s.modality_vector(m) is not None]
        if rows:
            X = np.stack(rows)
            mean = X.mean(axis=0)
            std = np.maximum(X.std(axis=0), STD_FLOOR)
            stats[m] = {"mean": mean, "std": std}
    new_samples = []
    for s in ds.samples:
        fields = {}
        for m in MODALITIES:
            v = s.modality_vector(m)
            if v is not None and m in stats:
                v = (v - stats[m]["mean"]) / stats[m]["std"]
            fields[m] = v
        new_samples.append(
            AlignedSample(sample_hash=s.sample_hash, family=s.family, **fields)
        )
    return replace(ds, samples=new_samples), stats


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModalitySynthSpec:
    """Cluster geometry for one modality.

    ``separation`` scales the distance of family centers from the origin and
    hence from each other (informativeness of the modality).  Families listed
    together in ``collapse_groups`` share a single center, making them
    indistinguishable through this modality alone — the lever used to build
    complementary-modality corpora.  ``center_overrides`` pins chosen
    families to explicit centers (e.g. to plant a near-duplicate family).
    Families in ``drop_families`` contribute no rows to this modality's
    table at all: the view is absent for them and the fusion layer zero
    fills it downstream.
    """

    dim: int
    separation: float = 3.0
    collapse_groups: tuple[tuple[str, ...], ...] = ()
    drop_fraction: float = 0.0
    drop_families: tuple[str, ...] = ()
    family_scale: Mapping[str, float] | None = None
    center_overrides: Mapping[str, tuple[float, ...]] | None = None


@dataclass(frozen=True)
class SynthConfig:
    families: tuple[str, ...]
    samples_per_family: int | Mapping[str, int]
    static: ModalitySynthSpec
    dynamic: ModalitySynthSpec
    network: ModalitySynthSpec
    noise_scale: float = 1.0
    center_seed: int = 7

    def spec(self, modality: str) -> ModalitySynthSpec:
        return getattr(self, modality)

    def count(self, family: str) -> int:
        if isinstance(self.samples_per_family, int):
            return self.samples_per_family
        return int(self.samples_per_family[family])


def _center_direction(seed: int, modality: str, anchor: str, dim: int) -> np.ndarray:
    """Unit direction keyed by (seed, modality, anchor) alone.

    Each center gets its own generator, so a family's center never moves
    when other families are added, removed, or reordered — extending a
    config with a holdout family leaves the trained geometry intact.
    """
    rng = np.random.default_rng(
        [seed, zlib.crc32(modality.encode("utf-8")), zlib.crc32(anchor.encode("utf-8"))]
    )
    direction = rng.normal(size=dim)
    return direction / max(np.linalg.norm(direction), 1e-12)


def synth_centers(config: SynthConfig) -> dict[str, dict[str, np.ndarray]]:
    """Deterministic per-(modality, family) cluster centers.

    Directions depend only on ``center_seed`` and the (modality, family)
    pair, so the same geometry can be reproduced and extended (zero-day
    constructions reuse these centers to position a holdout family
    relative to the trained ones).
    """
    centers: dict[str, dict[str, np.ndarray]] = {}
    for m in MODALITIES:
        spec = config.spec(m)
        group_of: dict[str, str] = {}
        for group in spec.collapse_groups:
            for fam in group:
                group_of[fam] = group[0]
        mod_centers: dict[str, np.ndarray] = {}
        for fam in config.families:
            anchor = group_of.get(fam, fam)
            if anchor in mod_centers:
                mod_centers[fam] = mod_centers[anchor]
                continue
            direction = _center_direction(config.center_seed, m, anchor, spec.dim)
            scale = 1.0
            if spec.family_scale and anchor in spec.family_scale:
                scale = float(spec.family_scale[anchor])
            mod_centers[anchor] = spec.separation * scale * direction
            mod_centers[fam] = mod_centers[anchor]
        if spec.center_overrides:
            for fam, vec in spec.center_overrides.items():
                arr = np.asarray(vec, dtype=np.float64)
                if arr.shape != (spec.dim,):
                    raise DatasetError(
                        f"center override for {fam!r}/{m} has shape {arr.shape}, expected ({spec.dim},)"
                    )
                mod_centers[fam] = arr
        centers[m] = {fam: mod_centers[fam] for fam in config.families}
    return centers


def synth_generate(
    config: SynthConfig, seed: int
) -> tuple[ModalityTable, ModalityTable, ModalityTable]:
    """Sample Gaussian clusters into three hash-aligned modality tables.

    Each family contributes ``count`` samples with a shared sample_hash
    across modalities; per-modality ``drop_fraction`` removes a seeded subset
    of rows from that table to exercise availability masks downstream.
    """
    if not config.families:
        raise DatasetError("at least one family required")
    centers = synth_centers(config)
    rng = np.random.default_rng(seed)
    hashes: list[str] = []
    families: list[str] = []
    for fi, fam in enumerate(config.families):
        n = config.count(fam)
        if n < 1:
            raise DatasetError(f"family {fam!r} needs at least one sample")
        for i in range(n):
            hashes.append(f"f{fi:02d}s{i:05d}")
            families.append(fam)
    total = len(hashes)
    vocab = tuple(sorted(set(config.families)))

    tables = []
    for m in MODALITIES:
        spec = config.spec(m)
        X = np.empty((total, spec.dim))
        row = 0
        for fam in config.families:
            n = config.count(fam)
            X[row : row + n] = centers[m][fam] + config.noise_scale * rng.normal(
                size=(n, spec.dim)
            )
            row += n
        keep = np.ones(total, dtype=bool)
        if spec.drop_families:
            keep &= ~np.isin(np.asarray(families), spec.drop_families)
        if spec.drop_fraction > 0.0:
            keep &= rng.random(total) >= spec.drop_fraction
            if not keep.any():
                eligible = np.flatnonzero(~np.isin(np.asarray(families), spec.drop_families))
                if eligible.size:
                    keep[eligible[0]] = True
        tables.append(
            ModalityTable(
                modality=m,
                sample_hashes=[h for h, k in zip(hashes, keep) if k],
                families=[f for f, k in zip(families, keep) if k],
                features=X[keep],
                vocabulary=vocab,
            )
        )
    return tables[0], tables[1], tables[2]
