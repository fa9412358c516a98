"""Experiment harness: seven strategies, repeats, comparisons, zero-day runs.

A run writes one directory:

    <out_dir>/<run_name>/
        config.json           resolved configuration echo
        epoch_reports.jsonl   one JSON line per epoch
        dialogue.jsonl        agent transcripts (agent strategies only)
        checkpoints/          model parameters + calibration
        predictions_test.csv  final calibrated test predictions
        latents_<m>.csv       encoder outputs for val+test (fusion strategies)
        final_summary.json    test metrics, abstention, reliability bins
        exports/              CSV views written by export_reports

Fallback-agent runs are bit-reproducible: identical config and seed give
byte-identical epoch_reports.jsonl.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import agents as agents_mod
from . import calibration as cal_mod
from . import classifier as clf_mod
from . import dataset as ds_mod
from . import dcae as dcae_mod
from . import fusion as fusion_mod
from . import metrics as metrics_mod
from .agents import AgentConfig, ControllerState, EpochSummary, UcbState
from .classifier import ClassifierModel, Prediction
from .dataset import AlignedDataset, AlignedSample, SynthConfig, ModalitySynthSpec
from .numerics import params_checksum, softmax

STRATEGIES = (
    "static_only",
    "dynamic_only",
    "network_only",
    "early_fusion",
    "late_fusion",
    "single_agent",
    "multi_agent",
)

MODALITY_STRATEGIES = {
    "static_only": "static",
    "dynamic_only": "dynamic",
    "network_only": "network",
}

DEFAULT_SPLIT_RATIOS = (0.7, 0.15, 0.15)


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class RunError(RuntimeError):
    """A run failed an internal consistency check."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CsvPaths:
    static: str | None = None
    dynamic: str | None = None
    network: str | None = None


@dataclass(frozen=True)
class DcaeSettings:
    epochs: int = 25
    batch_size: int = 32
    lr: float = 0.01
    lam: float = 1.0
    temperature: float = 0.5
    weight_decay: float = 0.0
    latent: Mapping[str, int] | None = None
    hidden: Mapping[str, tuple[int, ...]] | None = None

    def latent_for(self, modality: str) -> int | None:
        if self.latent is None:
            return None
        value = self.latent.get(modality)
        return None if value is None else int(value)

    def hidden_for(self, modality: str) -> tuple[int, ...] | None:
        if self.hidden is None:
            return None
        value = self.hidden.get(modality)
        return None if value is None else tuple(int(v) for v in value)


@dataclass(frozen=True)
class ClassifierSettings:
    batch_size: int = 32
    lr: float = 0.05
    weight_decay: float = 0.0
    hidden: tuple[int, ...] | None = None
    soft_labels: bool = False
    soft_label_alpha: float = 0.1
    learned_gate: bool = False


@dataclass(frozen=True)
class StrategyConfig:
    strategy: str
    data: SynthConfig | CsvPaths
    epochs: int = 30
    seeds: tuple[int, ...] = (0,)
    split_ratios: tuple[float, float, float] = DEFAULT_SPLIT_RATIOS
    balance_target: int | str | None = "max"
    dcae: DcaeSettings = field(default_factory=DcaeSettings)
    classifier: ClassifierSettings = field(default_factory=ClassifierSettings)
    calibration_mode: str = "temperature"
    abstain_tau: float = 0.7
    agent_mode: str = "fallback"  # "fallback" | "llm"
    gamma: float = 1.0
    ucb_blend: bool = False
    benign_label: str = "Benign"
    out_dir: str = "runs"
    run_name: str | None = None

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.seeds:
            raise ConfigError("at least one seed required")
        if self.calibration_mode not in cal_mod.CALIBRATION_KINDS:
            raise ConfigError(f"unknown calibration mode {self.calibration_mode!r}")
        if not 0.0 < self.abstain_tau < 1.0:
            raise ConfigError("abstain_tau must lie strictly between 0 and 1")
        if self.agent_mode not in ("fallback", "llm"):
            raise ConfigError("agent_mode must be 'fallback' or 'llm'")

    def agent_config(self) -> AgentConfig:
        return AgentConfig(mode=self.agent_mode, gamma=self.gamma)


def _synth_spec_to_dict(spec: ModalitySynthSpec) -> dict:
    return {
        "dim": spec.dim,
        "separation": spec.separation,
        "collapse_groups": [list(g) for g in spec.collapse_groups],
        "drop_fraction": spec.drop_fraction,
        "drop_families": list(spec.drop_families),
        "family_scale": None if spec.family_scale is None else dict(spec.family_scale),
        "center_overrides": None
        if spec.center_overrides is None
        else {k: list(v) for k, v in spec.center_overrides.items()},
    }


def _synth_spec_from_dict(doc: Mapping) -> ModalitySynthSpec:
    return ModalitySynthSpec(
        dim=int(doc["dim"]),
        separation=float(doc.get("separation", 3.0)),
        collapse_groups=tuple(tuple(g) for g in doc.get("collapse_groups", []) or []),
        drop_fraction=float(doc.get("drop_fraction", 0.0)),
        drop_families=tuple(doc.get("drop_families", []) or []),
        family_scale=None
        if not doc.get("family_scale")
        else {str(k): float(v) for k, v in doc["family_scale"].items()},
        center_overrides=None
        if not doc.get("center_overrides")
        else {str(k): tuple(float(x) for x in v) for k, v in doc["center_overrides"].items()},
    )


def synth_config_to_dict(cfg: SynthConfig) -> dict:
    return {
        "families": list(cfg.families),
        "samples_per_family": cfg.samples_per_family
        if isinstance(cfg.samples_per_family, int)
        else dict(cfg.samples_per_family),
        "noise_scale": cfg.noise_scale,
        "center_seed": cfg.center_seed,
        "static": _synth_spec_to_dict(cfg.static),
        "dynamic": _synth_spec_to_dict(cfg.dynamic),
        "network": _synth_spec_to_dict(cfg.network),
    }


def synth_config_from_dict(doc: Mapping) -> SynthConfig:
    spf = doc["samples_per_family"]
    return SynthConfig(
        families=tuple(doc["families"]),
        samples_per_family=int(spf) if isinstance(spf, int) else {str(k): int(v) for k, v in spf.items()},
        static=_synth_spec_from_dict(doc["static"]),
        dynamic=_synth_spec_from_dict(doc["dynamic"]),
        network=_synth_spec_from_dict(doc["network"]),
        noise_scale=float(doc.get("noise_scale", 1.0)),
        center_seed=int(doc.get("center_seed", 7)),
    )


def config_to_dict(cfg: StrategyConfig) -> dict:
    if isinstance(cfg.data, SynthConfig):
        data = {"synthetic": synth_config_to_dict(cfg.data)}
    else:
        data = {"csv": {"static": cfg.data.static, "dynamic": cfg.data.dynamic, "network": cfg.data.network}}
    return {
        "strategy": cfg.strategy,
        "epochs": cfg.epochs,
        "seeds": list(cfg.seeds),
        "data": data,
        "split": {"ratios": list(cfg.split_ratios)},
        "balance": {"target": cfg.balance_target},
        "dcae": {
            "epochs": cfg.dcae.epochs,
            "batch_size": cfg.dcae.batch_size,
            "lr": cfg.dcae.lr,
            "lambda": cfg.dcae.lam,
            "temperature": cfg.dcae.temperature,
            "weight_decay": cfg.dcae.weight_decay,
            "latent": None if cfg.dcae.latent is None else dict(cfg.dcae.latent),
            "hidden": None
            if cfg.dcae.hidden is None
            else {k: list(v) for k, v in cfg.dcae.hidden.items()},
        },
        "classifier": {
            "batch_size": cfg.classifier.batch_size,
            "lr": cfg.classifier.lr,
            "weight_decay": cfg.classifier.weight_decay,
            "hidden": None if cfg.classifier.hidden is None else list(cfg.classifier.hidden),
            "soft_labels": cfg.classifier.soft_labels,
            "soft_label_alpha": cfg.classifier.soft_label_alpha,
            "learned_gate": cfg.classifier.learned_gate,
        },
        "calibration": {"mode": cfg.calibration_mode},
        "abstention": {"tau": cfg.abstain_tau},
        "agents": {"mode": cfg.agent_mode, "gamma": cfg.gamma, "ucb_blend": cfg.ucb_blend},
        "benign_label": cfg.benign_label,
        "out_dir": cfg.out_dir,
        "run_name": cfg.run_name,
    }


def config_from_dict(doc: Mapping) -> StrategyConfig:
    """Parse the documented run-configuration schema (see README)."""
    try:
        data_doc = doc["data"]
        if "synthetic" in data_doc:
            data: SynthConfig | CsvPaths = synth_config_from_dict(data_doc["synthetic"])
        elif "csv" in data_doc:
            csv_doc = data_doc["csv"]
            data = CsvPaths(
                static=csv_doc.get("static"),
                dynamic=csv_doc.get("dynamic"),
                network=csv_doc.get("network"),
            )
        else:
            raise ConfigError("data section needs 'synthetic' or 'csv'")
        dcae_doc = doc.get("dcae", {})
        clf_doc = doc.get("classifier", {})
        agents_doc = doc.get("agents", {})
        return StrategyConfig(
            strategy=str(doc["strategy"]),
            data=data,
            epochs=int(doc.get("epochs", 30)),
            seeds=tuple(int(s) for s in doc.get("seeds", [0])),
            split_ratios=tuple(float(r) for r in doc.get("split", {}).get("ratios", DEFAULT_SPLIT_RATIOS)),  # type: ignore[arg-type]
            balance_target=doc.get("balance", {}).get("target", "max"),
            dcae=DcaeSettings(
                epochs=int(dcae_doc.get("epochs", 25)),
                batch_size=int(dcae_doc.get("batch_size", 32)),
                lr=float(dcae_doc.get("lr", 0.01)),
                lam=float(dcae_doc.get("lambda", 1.0)),
                temperature=float(dcae_doc.get("temperature", 0.5)),
                weight_decay=float(dcae_doc.get("weight_decay", 0.0)),
                latent=dcae_doc.get("latent"),
                hidden=None
                if not dcae_doc.get("hidden")
                else {k: tuple(v) for k, v in dcae_doc["hidden"].items()},
            ),
            classifier=ClassifierSettings(
                batch_size=int(clf_doc.get("batch_size", 32)),
                lr=float(clf_doc.get("lr", 0.05)),
                weight_decay=float(clf_doc.get("weight_decay", 0.0)),
                hidden=None if not clf_doc.get("hidden") else tuple(int(h) for h in clf_doc["hidden"]),
                soft_labels=bool(clf_doc.get("soft_labels", False)),
                soft_label_alpha=float(clf_doc.get("soft_label_alpha", 0.1)),
                learned_gate=bool(clf_doc.get("learned_gate", False)),
            ),
            calibration_mode=str(doc.get("calibration", {}).get("mode", "temperature")),
            abstain_tau=float(doc.get("abstention", {}).get("tau", 0.7)),
            agent_mode=str(agents_doc.get("mode", "fallback")),
            gamma=float(agents_doc.get("gamma", 1.0)),
            ucb_blend=bool(agents_doc.get("ucb_blend", False)),
            benign_label=str(doc.get("benign_label", "Benign")),
            out_dir=str(doc.get("out_dir", "runs")),
            run_name=doc.get("run_name"),
        )
    except KeyError as exc:
        raise ConfigError(f"missing configuration key: {exc}") from exc


def load_config(path: str) -> StrategyConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Data preparation
# ---------------------------------------------------------------------------

@dataclass
class RowSet:
    X: np.ndarray
    families: list[str]
    hashes: list[str]

    @property
    def n(self) -> int:
        return len(self.families)


@dataclass
class HeadData:
    """Feature matrices for one classifier head."""

    name: str
    train: RowSet
    val: RowSet
    test: RowSet
    gate_blocks: tuple[int, ...] | None = None


def _derived_seeds(seed: int) -> dict[str, int]:
    names = (
        "data",
        "split",
        "balance",
        "dcae_static",
        "dcae_dynamic",
        "dcae_network",
        "classifier",
        "classifier_dynamic",
        "classifier_network",
    )
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: int(c.generate_state(1)[0]) for n, c in zip(names, children)}


def prepare_data(cfg: StrategyConfig, seed: int) -> AlignedDataset:
    """Load or synthesize tables, align, split, and z-score from train stats."""
    seeds = _derived_seeds(seed)
    if isinstance(cfg.data, SynthConfig):
        static, dynamic, network = ds_mod.synth_generate(cfg.data, seeds["data"])
    else:
        static = (
            ds_mod.load_modality_csv(cfg.data.static, "static") if cfg.data.static else None
        )
        dynamic = (
            ds_mod.load_modality_csv(cfg.data.dynamic, "dynamic") if cfg.data.dynamic else None
        )
        network = (
            ds_mod.load_modality_csv(cfg.data.network, "network") if cfg.data.network else None
        )
    ds = ds_mod.align_modalities(static, dynamic, network)
    ds = ds_mod.split_grouped(ds, cfg.split_ratios, seeds["split"])
    ds, _stats = ds_mod.standardize_features(ds)
    return ds


def _balance_rows(
    rows: list[tuple[str, str, np.ndarray]],
    target: int | str | None,
    seed: int,
) -> list[tuple[str, str, np.ndarray]]:
    if target is None or not rows:
        return rows
    counts: dict[str, int] = {}
    for _, fam, _vec in rows:
        counts[fam] = counts.get(fam, 0) + 1
    resolved = max(counts.values()) if target == "max" else int(target)
    return ds_mod.oversample_to_balance(rows, resolved, seed, lambda r: r[1])


def _rowset(rows: Sequence[tuple[str, str, np.ndarray]]) -> RowSet:
    if not rows:
        raise RunError("empty row set; check split ratios and modality availability")
    return RowSet(
        X=np.stack([r[2] for r in rows]),
        families=[r[1] for r in rows],
        hashes=[r[0] for r in rows],
    )


def _train_dcae_for(
    ds: AlignedDataset,
    modality: str,
    cfg: StrategyConfig,
    seed: int,
    audit: set[str] | None = None,
) -> dcae_mod.DcaeModel:
    train = [s for s in ds.in_split("train") if s.modality_vector(modality) is not None]
    if not train:
        raise RunError(f"no train samples with modality {modality!r}")
    X = np.stack([s.modality_vector(modality) for s in train])
    families = [s.family for s in train]
    hashes = [s.sample_hash for s in train]
    model = dcae_mod.new_dcae(
        modality,
        feature_dim=X.shape[1],
        latent_dim=cfg.dcae.latent_for(modality),
        hidden_dims=cfg.dcae.hidden_for(modality),
        lam=cfg.dcae.lam,
        temperature=cfg.dcae.temperature,
        seed=seed,
    )
    train_cfg = dcae_mod.DcaeTrainConfig(
        epochs=cfg.dcae.epochs,
        batch_size=cfg.dcae.batch_size,
        lr=cfg.dcae.lr,
        seed=seed,
        weight_decay=cfg.dcae.weight_decay,
    )
    model, _trace = dcae_mod.train_dcae(
        model, X, families, train_cfg, sample_hashes=hashes, audit=audit
    )
    return model


def _embeddings_for(
    model: dcae_mod.DcaeModel, samples: Sequence[AlignedSample], modality: str
) -> list[dcae_mod.LatentEmbedding]:
    present = [s for s in samples if s.modality_vector(modality) is not None]
    if not present:
        return []
    X = np.stack([s.modality_vector(modality) for s in present])
    return dcae_mod.embed_dataset(
        model, [s.sample_hash for s in present], [s.family for s in present], X
    )


def _fused_rows(
    ds: AlignedDataset,
    dcaes: dict[str, dcae_mod.DcaeModel],
    split: str,
) -> tuple[list[tuple[str, str, np.ndarray]], list[fusion_mod.FusedSample]]:
    samples = ds.in_split(split)
    embs = {
        m: _embeddings_for(dcaes[m], samples, m) for m in ds_mod.MODALITIES
    }
    triples = fusion_mod.align_latents(embs["static"], embs["dynamic"], embs["network"])
    dims = tuple(dcaes[m].latent_dim for m in ds_mod.MODALITIES)
    fused = fusion_mod.fuse_triples(triples, dims)  # type: ignore[arg-type]
    rows = [(f.sample_hash, f.family, f.z_fused) for f in fused]
    return rows, fused


def _early_fusion_rows(
    ds: AlignedDataset, split: str
) -> list[tuple[str, str, np.ndarray]]:
    dims = tuple(d if d is not None else 0 for d in ds.feature_dims)
    rows = []
    for s in ds.in_split(split):
        z, _gate, _scale = fusion_mod.fuse_vectors(s.static, s.dynamic, s.network, dims)  # type: ignore[arg-type]
        rows.append((s.sample_hash, s.family, z))
    return rows


def _latent_rows(
    ds: AlignedDataset, model: dcae_mod.DcaeModel, modality: str, split: str
) -> list[tuple[str, str, np.ndarray]]:
    embs = _embeddings_for(model, ds.in_split(split), modality)
    return [(e.sample_hash, e.family, e.z) for e in embs]


# ---------------------------------------------------------------------------
# Calibration arms
# ---------------------------------------------------------------------------

@dataclass
class FittedArm:
    """A calibration arm fitted on validation logits."""

    name: str
    model: cal_mod.CalibrationModel | None
    blend: float | None = None  # weight on the calibrated term for blend arms

    def probs(self, logits: np.ndarray) -> np.ndarray:
        if self.blend is not None:
            assert self.model is not None
            calibrated = cal_mod.apply_calibration(self.model, logits)
            raw = softmax(np.asarray(logits, dtype=np.float64))
            return self.blend * calibrated + (1.0 - self.blend) * raw
        if self.model is None:
            return softmax(np.asarray(logits, dtype=np.float64))
        return cal_mod.apply_calibration(self.model, logits)


def fit_arm(name: str, logits: np.ndarray, y: np.ndarray) -> FittedArm:
    if name in cal_mod.CALIBRATION_KINDS:
        return FittedArm(name=name, model=cal_mod.fit_calibration(name, logits, y))
    if name.startswith("blend_"):
        w = float(name.split("_", 1)[1])
        model = cal_mod.fit_calibration("temperature", logits, y)
        return FittedArm(name=name, model=model, blend=w)
    raise ConfigError(f"unknown calibration arm {name!r}")


# ---------------------------------------------------------------------------
# Epoch bookkeeping
# ---------------------------------------------------------------------------

def _eval_probs(
    probs: np.ndarray, families: Sequence[str], vocab: Sequence[str], hashes: Sequence[str]
) -> tuple[list[Prediction], np.ndarray, dict[str, float]]:
    index = {f: i for i, f in enumerate(vocab)}
    c = len(vocab)
    confusion = np.zeros((c, c), dtype=np.int64)
    preds: list[Prediction] = []
    for i, fam in enumerate(families):
        k = int(np.argmax(probs[i]))
        preds.append(
            Prediction(sample_hash=hashes[i], probs=probs[i], predicted=k, confidence=float(probs[i, k]))
        )
        confusion[index[fam], k] += 1
    f1 = metrics_mod.per_class_f1(confusion)
    per_family = {fam: float(f1[i]) for i, fam in enumerate(vocab)}
    return preds, confusion, per_family


def _epoch_metrics(
    probs: np.ndarray, families: Sequence[str], vocab: Sequence[str], hashes: Sequence[str]
) -> dict:
    preds, confusion, per_family = _eval_probs(probs, families, vocab, hashes)
    index = {f: i for i, f in enumerate(vocab)}
    y = np.asarray([index[f] for f in families])
    correct = [p.predicted == index[families[i]] for i, p in enumerate(preds)]
    conf = [p.confidence for p in preds]
    ece_value, bins = metrics_mod.ece(conf, correct)
    top2 = np.sort(probs, axis=1)[:, -2:]
    margins = top2[:, 1] - top2[:, 0]
    return {
        "preds": preds,
        "confusion": confusion,
        "per_family_f1": per_family,
        "macro_f1": metrics_mod.macro_f1(confusion),
        "accuracy": metrics_mod.accuracy(confusion),
        "ece": ece_value,
        "bins": bins,
        "nll": cal_mod.nll_of_probs(probs, y),
        "mean_margin": float(margins.mean()),
    }


def _margin_uncertainty(probs: np.ndarray) -> np.ndarray:
    top2 = np.sort(probs, axis=1)[:, -2:]
    return 1.0 - (top2[:, 1] - top2[:, 0])


def _checksum_all(model: ClassifierModel, dcaes: dict[str, dcae_mod.DcaeModel] | None) -> str:
    stacks = [model.layers]
    if dcaes:
        for m in sorted(dcaes):
            stacks.append(dcaes[m].encoder)
            stacks.append(dcaes[m].decoder)
    digest = hashlib.sha256(params_checksum(stacks).encode("utf-8"))
    if model.gate_params is not None:
        digest.update(np.ascontiguousarray(model.gate_params).tobytes())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# run_strategy
# ---------------------------------------------------------------------------

def run_strategy(cfg: StrategyConfig, seed: int | None = None) -> Path:
    """Execute one strategy for one seed; returns the run directory."""
    seed = cfg.seeds[0] if seed is None else seed
    seeds = _derived_seeds(seed)
    name = cfg.run_name or cfg.strategy
    run_dir = Path(cfg.out_dir) / f"{name}_seed{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "checkpoints").mkdir(exist_ok=True)

    config_echo = config_to_dict(cfg)
    config_echo["resolved_seed"] = seed
    with open(run_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(config_echo, fh, indent=2, sort_keys=True)

    ds = prepare_data(cfg, seed)
    vocab = ds.family_vocabulary
    audit: set[str] = set()

    if cfg.strategy == "late_fusion":
        result = _run_late_fusion(cfg, ds, seeds, run_dir, audit, seed)
    else:
        result = _run_single_head(cfg, ds, seeds, run_dir, audit, seed)

    train_hashes = {
        h for h, s in ds.split_assignment.items() if s == "train"
    }
    leaked = audit - train_hashes
    if leaked:
        raise RunError(f"training consumed {len(leaked)} non-train samples")

    result["seed"] = seed
    result["strategy"] = cfg.strategy
    result["vocabulary"] = list(vocab)
    result["split_sizes"] = {
        split: len(ds.in_split(split)) for split in ds_mod.SPLITS
    }
    result["audit"] = {
        "train_hash_count": len(audit),
        "outside_train": len(leaked),
    }
    with open(run_dir / "final_summary.json", "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
    return run_dir


def _report_line(payload: dict) -> str:
    return json.dumps(payload, sort_keys=False)


def _final_block(
    probs_test: np.ndarray,
    test_rows: RowSet,
    vocab: Sequence[str],
    cfg: StrategyConfig,
    calibration_kind: str,
    run_dir: Path,
) -> dict:
    stats = _epoch_metrics(probs_test, test_rows.families, vocab, test_rows.hashes)
    abstain = cal_mod.abstain_filter(stats["preds"], cfg.abstain_tau)
    index = {f: i for i, f in enumerate(vocab)}
    kept_correct = [
        p.predicted == index[test_rows.families[i]]
        for i, p in enumerate(stats["preds"])
        if abstain.decisions[i].kept
    ]
    kept_accuracy = float(np.mean(kept_correct)) if kept_correct else None
    clf_mod.export_predictions_csv(
        stats["preds"], test_rows.families, vocab, str(run_dir / "predictions_test.csv")
    )
    return {
        "test": {
            "macro_f1": stats["macro_f1"],
            "accuracy": stats["accuracy"],
            "ece": stats["ece"],
            "nll": stats["nll"],
        },
        "calibration_kind": calibration_kind,
        "abstention": {
            "tau": cfg.abstain_tau,
            "coverage": abstain.coverage,
            "abstention_rate": abstain.abstention_rate,
            "kept_accuracy": kept_accuracy,
            "abstain_all": not abstain.kept,
        },
        "reliability_bins": [
            {
                "bin_index": b.bin_index,
                "lower": b.lower,
                "upper": b.upper,
                "count": b.count,
                "mean_confidence": b.mean_confidence,
                "accuracy": b.accuracy,
            }
            for b in stats["bins"]
        ],
    }


def _run_single_head(
    cfg: StrategyConfig,
    ds: AlignedDataset,
    seeds: dict[str, int],
    run_dir: Path,
    audit: set[str],
    seed: int,
) -> dict:
    vocab = ds.family_vocabulary
    strategy = cfg.strategy
    dcaes: dict[str, dcae_mod.DcaeModel] = {}
    gate_blocks: tuple[int, ...] | None = None

    if strategy in MODALITY_STRATEGIES:
        modality = MODALITY_STRATEGIES[strategy]
        model_m = _train_dcae_for(ds, modality, cfg, seeds[f"dcae_{modality}"], audit)
        dcaes[modality] = model_m
        rows = {split: _latent_rows(ds, model_m, modality, split) for split in ds_mod.SPLITS}
    elif strategy == "early_fusion":
        rows = {split: _early_fusion_rows(ds, split) for split in ds_mod.SPLITS}
    elif strategy in ("single_agent", "multi_agent"):
        for m in ds_mod.MODALITIES:
            dcaes[m] = _train_dcae_for(ds, m, cfg, seeds[f"dcae_{m}"], audit)
        rows = {}
        for split in ds_mod.SPLITS:
            rows[split], _fused = _fused_rows(ds, dcaes, split)
        if cfg.classifier.learned_gate:
            gate_blocks = tuple(dcaes[m].latent_dim for m in ds_mod.MODALITIES)
        _export_latents(ds, dcaes, run_dir)
    else:
        raise ConfigError(f"strategy {strategy!r} is not a single-head strategy")

    train_rows = _balance_rows(rows["train"], cfg.balance_target, seeds["balance"])
    head = HeadData(
        name=strategy,
        train=_rowset(train_rows),
        val=_rowset(rows["val"]),
        test=_rowset(rows["test"]),
        gate_blocks=gate_blocks,
    )

    counts = {f: head.train.families.count(f) for f in vocab}
    weights_map = ds_mod.inverse_frequency_weights(counts)
    class_weights = [weights_map[f] for f in vocab]
    model = clf_mod.new_classifier(
        input_dim=head.train.X.shape[1],
        family_vocabulary=vocab,
        class_weights=class_weights,
        hidden_dims=cfg.classifier.hidden,
        seed=seeds["classifier"],
        learned_gate_blocks=head.gate_blocks if cfg.classifier.learned_gate else None,
    )

    agent_level = {"single_agent": "single", "multi_agent": "multi"}.get(strategy)
    agent_cfg = cfg.agent_config()
    arms = agents_mod.BLEND_ARMS if cfg.ucb_blend else agents_mod.DEFAULT_ARMS
    state = ControllerState(ucb=UcbState.fresh(arms))
    index = {f: i for i, f in enumerate(vocab)}
    y_train = np.asarray([index[f] for f in head.train.families])
    y_val = np.asarray([index[f] for f in head.val.families])
    rng = np.random.default_rng(seeds["classifier"])

    sampling_weights: np.ndarray | None = None
    prev_train_probs: np.ndarray | None = None
    prev_metrics: dict | None = None
    best_val = (-1.0, 0)

    reports = open(run_dir / "epoch_reports.jsonl", "w", encoding="utf-8")
    dialogue = (
        open(run_dir / "dialogue.jsonl", "w", encoding="utf-8") if agent_level else None
    )
    try:
        for epoch in range(1, cfg.epochs + 1):
            soft_targets = None
            if cfg.classifier.soft_labels and prev_train_probs is not None:
                soft_targets = clf_mod.soft_targets_from_probs(
                    y_train, prev_train_probs, cfg.classifier.soft_label_alpha
                )
            model, _loss = clf_mod.train_epoch(
                model,
                head.train.X,
                y_train,
                lr=cfg.classifier.lr,
                batch_size=cfg.classifier.batch_size,
                rng=rng,
                weight_decay=cfg.classifier.weight_decay,
                sampling_weights=sampling_weights,
                soft_targets=soft_targets,
                sample_hashes=head.train.hashes,
                audit=audit,
            )

            logits_val = clf_mod.logits_of(model, head.val.X)
            if agent_level == "multi":
                arm_idx = agents_mod.ucb_select(state.ucb)
                arm_name = state.ucb.arms[arm_idx]
            else:
                arm_idx = None
                arm_name = cfg.calibration_mode
            arm = fit_arm(arm_name, logits_val, y_val)
            probs_val = arm.probs(logits_val)
            stats = _epoch_metrics(probs_val, head.val.families, vocab, head.val.hashes)
            if agent_level == "multi" and arm_idx is not None:
                state = replace(
                    state, ucb=agents_mod.ucb_update(state.ucb, arm_idx, -stats["nll"])
                )

            if stats["macro_f1"] > best_val[0]:
                best_val = (stats["macro_f1"], epoch)

            summary = EpochSummary(
                epoch=epoch,
                macro_f1=stats["macro_f1"],
                accuracy=stats["accuracy"],
                ece=stats["ece"],
                mean_margin=stats["mean_margin"],
                per_family_f1=stats["per_family_f1"],
                delta_macro_f1=0.0 if prev_metrics is None else stats["macro_f1"] - prev_metrics["macro_f1"],
                delta_accuracy=0.0 if prev_metrics is None else stats["accuracy"] - prev_metrics["accuracy"],
                delta_ece=0.0 if prev_metrics is None else stats["ece"] - prev_metrics["ece"],
            )
            prev_metrics = stats

            agent_block = None
            weight_inert = None
            if agent_level:
                train_probs = softmax(clf_mod.logits_of(model, head.train.X))
                before = _checksum_all(model, dcaes)
                if agent_level == "multi":
                    base = 1.0 + _margin_uncertainty(train_probs)
                    cycle = agents_mod.run_epoch_cycle(
                        summary,
                        state,
                        agent_cfg,
                        sample_families=head.train.families,
                        base_weights=base,
                        vocabulary=vocab,
                    )
                else:
                    cycle = agents_mod.single_agent_cycle(
                        summary,
                        state,
                        agent_cfg,
                        sample_families=head.train.families,
                        vocabulary=vocab,
                    )
                after = _checksum_all(model, dcaes)
                if before != after:
                    raise RunError("agent cycle modified model parameters")
                weight_inert = True
                state = cycle.state
                sampling_weights = cycle.signals.sampling_weights
                if dialogue is not None:
                    for msg in cycle.messages:
                        dialogue.write(agents_mod.dialogue_jsonl_line(msg) + "\n")
                agent_block = {
                    "clarity": cycle.scores.clarity,
                    "jargon": cycle.scores.jargon,
                    "composite": cycle.scores.composite,
                    "assistance_quality": cycle.scores.assistance_quality,
                    "critic_quality": cycle.scores.critic_quality,
                    "escalate": cycle.signals.escalate,
                    "targets": list(cycle.signals.targets),
                    "critic_reliab": cycle.signals.critic_reliab,
                }
                prev_train_probs = train_probs
            elif cfg.classifier.soft_labels:
                prev_train_probs = softmax(clf_mod.logits_of(model, head.train.X))

            reports.write(
                _report_line(
                    {
                        "epoch": epoch,
                        "strategy": cfg.strategy,
                        "seed": seed,
                        "macro_f1": stats["macro_f1"],
                        "accuracy": stats["accuracy"],
                        "ece": stats["ece"],
                        "nll": stats["nll"],
                        "mean_margin": stats["mean_margin"],
                        "per_family_f1": stats["per_family_f1"],
                        "calibration_arm": arm_name,
                        "agent": agent_block,
                        "weight_inert": weight_inert,
                    }
                )
                + "\n"
            )
    finally:
        reports.close()
        if dialogue is not None:
            dialogue.close()

    # Final evaluation: multi_agent commits to the best-reward arm, others to
    # the configured mode; fitted on validation, applied to test.
    if agent_level == "multi":
        pulls = state.ucb.counts
        best_arm = 0
        for i in range(1, len(pulls)):
            if pulls[i] > 0 and (pulls[best_arm] == 0 or state.ucb.means[i] > state.ucb.means[best_arm]):
                best_arm = i
        final_arm_name = state.ucb.arms[best_arm]
    else:
        final_arm_name = cfg.calibration_mode
    logits_val = clf_mod.logits_of(model, head.val.X)
    final_arm = fit_arm(final_arm_name, logits_val, y_val)
    probs_test = final_arm.probs(clf_mod.logits_of(model, head.test.X))

    clf_mod.save_classifier(model, str(run_dir / "checkpoints" / "classifier.npz"))
    for m, d in dcaes.items():
        dcae_mod.save_dcae(d, str(run_dir / "checkpoints" / f"dcae_{m}.npz"))
    if final_arm.model is not None:
        cal_mod.save_calibration(final_arm.model, str(run_dir / "checkpoints" / "calibration.json"))

    result = _final_block(probs_test, head.test, vocab, cfg, final_arm_name, run_dir)
    result["best_val"] = {"macro_f1": best_val[0], "epoch": best_val[1]}
    result["epochs"] = cfg.epochs
    return result


def _export_latents(
    ds: AlignedDataset, dcaes: dict[str, dcae_mod.DcaeModel], run_dir: Path
) -> None:
    for m, model in dcaes.items():
        embs = []
        for split in ("val", "test"):
            embs.extend(_embeddings_for(model, ds.in_split(split), m))
        if embs:
            dcae_mod.export_latents_csv(embs, str(run_dir / f"latents_{m}.csv"))


def _run_late_fusion(
    cfg: StrategyConfig,
    ds: AlignedDataset,
    seeds: dict[str, int],
    run_dir: Path,
    audit: set[str],
    seed: int,
) -> dict:
    """Per-modality latent classifiers combined by calibrated-probability
    averaging over the modalities each sample actually has."""
    vocab = ds.family_vocabulary
    index = {f: i for i, f in enumerate(vocab)}

    dcaes: dict[str, dcae_mod.DcaeModel] = {}
    heads: dict[str, HeadData] = {}
    models: dict[str, ClassifierModel] = {}
    rngs: dict[str, np.random.Generator] = {}
    y_train: dict[str, np.ndarray] = {}
    y_val: dict[str, np.ndarray] = {}
    clf_seed_names = {"static": "classifier", "dynamic": "classifier_dynamic", "network": "classifier_network"}

    for m in ds_mod.MODALITIES:
        dcaes[m] = _train_dcae_for(ds, m, cfg, seeds[f"dcae_{m}"], audit)
        rows = {split: _latent_rows(ds, dcaes[m], m, split) for split in ds_mod.SPLITS}
        train_rows = _balance_rows(rows["train"], cfg.balance_target, seeds["balance"])
        heads[m] = HeadData(
            name=m, train=_rowset(train_rows), val=_rowset(rows["val"]), test=_rowset(rows["test"])
        )
        counts = {f: heads[m].train.families.count(f) for f in vocab}
        weights_map = ds_mod.inverse_frequency_weights(counts)
        models[m] = clf_mod.new_classifier(
            input_dim=heads[m].train.X.shape[1],
            family_vocabulary=vocab,
            class_weights=[weights_map[f] for f in vocab],
            hidden_dims=cfg.classifier.hidden,
            seed=seeds[clf_seed_names[m]],
        )
        rngs[m] = np.random.default_rng(seeds[clf_seed_names[m]])
        y_train[m] = np.asarray([index[f] for f in heads[m].train.families])
        y_val[m] = np.asarray([index[f] for f in heads[m].val.families])

    def ensemble_probs(split: str) -> tuple[np.ndarray, RowSet]:
        samples = ds.in_split(split)
        keep = [s for s in samples if any(s.mask)]
        per_mod_probs: dict[str, dict[str, np.ndarray]] = {}
        for m in ds_mod.MODALITIES:
            head_rows = heads[m]
            src = getattr(head_rows, split)
            logits = clf_mod.logits_of(models[m], src.X)
            arm = fit_arm(
                cfg.calibration_mode, clf_mod.logits_of(models[m], head_rows.val.X), y_val[m]
            )
            probs = arm.probs(logits)
            per_mod_probs[m] = {h: probs[i] for i, h in enumerate(src.hashes)}
        stacked = []
        families = []
        hashes = []
        for s in keep:
            acc = []
            for m in ds_mod.MODALITIES:
                p = per_mod_probs[m].get(s.sample_hash)
                if p is not None:
                    acc.append(p)
            stacked.append(np.mean(acc, axis=0))
            families.append(s.family)
            hashes.append(s.sample_hash)
        return np.stack(stacked), RowSet(X=np.zeros((len(keep), 1)), families=families, hashes=hashes)

    best_val = (-1.0, 0)
    with open(run_dir / "epoch_reports.jsonl", "w", encoding="utf-8") as reports:
        for epoch in range(1, cfg.epochs + 1):
            for m in ds_mod.MODALITIES:
                models[m], _ = clf_mod.train_epoch(
                    models[m],
                    heads[m].train.X,
                    y_train[m],
                    lr=cfg.classifier.lr,
                    batch_size=cfg.classifier.batch_size,
                    rng=rngs[m],
                    weight_decay=cfg.classifier.weight_decay,
                    sample_hashes=heads[m].train.hashes,
                    audit=audit,
                )
            probs_val, val_rows = ensemble_probs("val")
            stats = _epoch_metrics(probs_val, val_rows.families, vocab, val_rows.hashes)
            if stats["macro_f1"] > best_val[0]:
                best_val = (stats["macro_f1"], epoch)
            reports.write(
                _report_line(
                    {
                        "epoch": epoch,
                        "strategy": cfg.strategy,
                        "seed": seed,
                        "macro_f1": stats["macro_f1"],
                        "accuracy": stats["accuracy"],
                        "ece": stats["ece"],
                        "nll": stats["nll"],
                        "mean_margin": stats["mean_margin"],
                        "per_family_f1": stats["per_family_f1"],
                        "calibration_arm": cfg.calibration_mode,
                        "agent": None,
                        "weight_inert": None,
                    }
                )
                + "\n"
            )

    probs_test, test_rows = ensemble_probs("test")
    for m in ds_mod.MODALITIES:
        clf_mod.save_classifier(models[m], str(run_dir / "checkpoints" / f"classifier_{m}.npz"))
        dcae_mod.save_dcae(dcaes[m], str(run_dir / "checkpoints" / f"dcae_{m}.npz"))
    result = _final_block(probs_test, test_rows, vocab, cfg, cfg.calibration_mode, run_dir)
    result["best_val"] = {"macro_f1": best_val[0], "epoch": best_val[1]}
    result["epochs"] = cfg.epochs
    return result


# ---------------------------------------------------------------------------
# Repeats and comparisons
# ---------------------------------------------------------------------------

def run_repeats(cfg: StrategyConfig) -> dict:
    """Run every seed and aggregate final test metrics as mean +- sample std."""
    run_dirs = [run_strategy(cfg, seed) for seed in cfg.seeds]
    rows = []
    for d in run_dirs:
        with open(d / "final_summary.json", "r", encoding="utf-8") as fh:
            rows.append(json.load(fh))
    metrics = ("macro_f1", "accuracy", "ece", "nll")
    agg = {}
    for m in metrics:
        values = [r["test"][m] for r in rows]
        mean = float(np.mean(values))
        std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
        agg[m] = {"mean": mean, "std": std, "values": values}
    summary = {
        "strategy": cfg.strategy,
        "seeds": list(cfg.seeds),
        "metrics": agg,
        "run_dirs": [str(d) for d in run_dirs],
    }
    out = Path(cfg.out_dir) / f"{cfg.run_name or cfg.strategy}_repeats.json"
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


WILCOXON_PAIRS = (("early_fusion", "late_fusion"), ("single_agent", "multi_agent"))

COMPARE_METRICS = ("macro_f1", "accuracy", "ece")


def compare_strategies(run_dirs: Sequence[str | Path]) -> dict:
    """Significance report over per-seed final test metrics.

    Pairwise Wilcoxon signed-rank tests for early-vs-late fusion and
    single-vs-multi agent, plus a Friedman test across all supplied
    strategies, per metric.  Requires >= 2 strategies with identical seed
    sets.
    """
    by_strategy: dict[str, dict[int, dict]] = {}
    for d in run_dirs:
        path = Path(d) / "final_summary.json"
        if not path.exists():
            raise ConfigError(f"{d} has no final_summary.json")
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        by_strategy.setdefault(doc["strategy"], {})[int(doc["seed"])] = doc

    if len(by_strategy) < 2:
        raise ConfigError("need at least two strategies to compare")
    seed_sets = {s: tuple(sorted(v)) for s, v in by_strategy.items()}
    reference = next(iter(seed_sets.values()))
    mismatched = {s: seeds for s, seeds in seed_sets.items() if seeds != reference}
    if mismatched:
        raise ConfigError(f"mismatched seed sets across strategies: {seed_sets}")

    strategies = sorted(by_strategy)
    seeds = list(reference)

    def metric_vector(strategy: str, metric: str) -> list[float]:
        return [by_strategy[strategy][s]["test"][metric] for s in seeds]

    report: dict = {"seeds": seeds, "strategies": strategies, "wilcoxon": [], "friedman": []}
    for a, b in WILCOXON_PAIRS:
        if a in by_strategy and b in by_strategy:
            for metric in COMPARE_METRICS:
                x = metric_vector(a, metric)
                y = metric_vector(b, metric)
                try:
                    w = metrics_mod.wilcoxon_signed_rank(x, y)
                except metrics_mod.MetricsError:
                    continue
                report["wilcoxon"].append(
                    {
                        "pair": [a, b],
                        "metric": metric,
                        "w_plus": w.w_plus,
                        "p_value": w.p_value,
                        "effect_size_r": w.effect_size_r,
                        "n": w.n,
                        "method": w.method,
                    }
                )
    if len(seeds) >= 2:
        for metric in COMPARE_METRICS:
            matrix = np.asarray(
                [[by_strategy[s][seed]["test"][metric] for s in strategies] for seed in seeds]
            )
            fr = metrics_mod.friedman_test(matrix)
            report["friedman"].append(
                {
                    "metric": metric,
                    "chi2": fr.chi2,
                    "p_value": fr.p_value,
                    "dof": fr.dof,
                    "treatments": strategies,
                }
            )
    return report


def comparison_table(report: dict) -> str:
    lines = ["pair                              metric     W+      p        r      method"]
    for row in report["wilcoxon"]:
        pair = f"{row['pair'][0]} vs {row['pair'][1]}"
        lines.append(
            f"{pair:<33} {row['metric']:<9} {row['w_plus']:<7.1f} {row['p_value']:<8.4f} "
            f"{row['effect_size_r']:<6.3f} {row['method']}"
        )
    lines.append("")
    lines.append("friedman  metric     chi2     p        dof")
    for row in report["friedman"]:
        lines.append(
            f"          {row['metric']:<9} {row['chi2']:<8.3f} {row['p_value']:<8.4f} {row['dof']}"
        )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Zero-day evaluation
# ---------------------------------------------------------------------------

def make_zero_day_synth(
    base: SynthConfig, holdout: str, mode: str, anchor: str | None = None,
    benign_label: str = "Benign", offset_scale: float = 0.35,
) -> SynthConfig:
    """Extend a synthetic config with a holdout family.

    mode 'near': the holdout sits a small offset from ``anchor`` in every
    modality — behaviour transfers and the detector should still fire.
    mode 'far': the holdout presents exactly one view, placed at the shared
    center of the largest ransomware collapse group; the other modalities
    are absent and zero-filled by the fusion gate.  The only evidence
    available is one the trained model cannot resolve below the family
    level, so calibrated confidence collapses into abstention.
    """
    if holdout in base.families:
        raise ConfigError(f"holdout family {holdout!r} already exists in the base config")
    ransomware = [f for f in base.families if f != benign_label]
    if not ransomware:
        raise ConfigError("no non-benign families to anchor the holdout")
    centers = ds_mod.synth_centers(base)
    rng = np.random.default_rng(base.center_seed + 101)

    overrides: dict[str, np.ndarray] = {}
    absent: tuple[str, ...] = ()
    if mode == "near":
        anchor = anchor or ransomware[0]
        if anchor not in base.families:
            raise ConfigError(f"anchor family {anchor!r} not in the base config")
        for m in ds_mod.MODALITIES:
            spec = base.spec(m)
            direction = rng.normal(size=spec.dim)
            direction /= max(np.linalg.norm(direction), 1e-12)
            overrides[m] = centers[m][anchor] + offset_scale * direction
    elif mode == "far":
        candidates = []
        for m in ds_mod.MODALITIES:
            for group in base.spec(m).collapse_groups:
                members = tuple(f for f in group if f in ransomware)
                if len(members) >= 2:
                    candidates.append((m, members))
        if not candidates:
            raise ConfigError(
                "mode 'far' needs a modality whose collapse group spans two or more "
                "non-benign families: the holdout's only view must not identify it"
            )
        modality, members = max(
            candidates,
            key=lambda c: (len(c[1]), -ds_mod.MODALITIES.index(c[0])),
        )
        spec = base.spec(modality)
        direction = rng.normal(size=spec.dim)
        direction /= max(np.linalg.norm(direction), 1e-12)
        overrides[modality] = centers[modality][members[0]] + offset_scale * direction
        absent = tuple(m for m in ds_mod.MODALITIES if m != modality)
    else:
        raise ConfigError("zero-day mode must be 'near' or 'far'")

    def extend(spec: ModalitySynthSpec, m: str) -> ModalitySynthSpec:
        if m in overrides:
            existing = dict(spec.center_overrides or {})
            existing[holdout] = tuple(float(v) for v in overrides[m])
            spec = replace(spec, center_overrides=existing)
        if m in absent:
            spec = replace(spec, drop_families=(*spec.drop_families, holdout))
        return spec

    samples = base.samples_per_family
    if not isinstance(samples, int):
        samples = dict(samples)
        samples[holdout] = int(np.mean(list(samples.values())))
    return replace(
        base,
        families=(*base.families, holdout),
        samples_per_family=samples,
        static=extend(base.static, "static"),
        dynamic=extend(base.dynamic, "dynamic"),
        network=extend(base.network, "network"),
    )


def zero_day_eval(cfg: StrategyConfig, holdout: str) -> dict:
    """Leave-one-family-out detection with abstention.

    The holdout family is removed from training and calibration entirely;
    the model is trained on the remaining families and evaluated per epoch
    on all holdout samples plus the benign test split, with predictions
    mapped to binary benign-vs-ransomware.  The returned report carries
    per-epoch rows, the best-F1 row, and a hash audit proving the holdout
    never reached training or calibration.
    """
    seed = cfg.seeds[0]
    seeds = _derived_seeds(seed)
    name = cfg.run_name or f"zeroday_{holdout}"
    run_dir = Path(cfg.out_dir) / f"{name}_seed{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "checkpoints").mkdir(exist_ok=True)

    if isinstance(cfg.data, SynthConfig):
        static, dynamic, network = ds_mod.synth_generate(cfg.data, seeds["data"])
    else:
        static = ds_mod.load_modality_csv(cfg.data.static, "static") if cfg.data.static else None
        dynamic = ds_mod.load_modality_csv(cfg.data.dynamic, "dynamic") if cfg.data.dynamic else None
        network = ds_mod.load_modality_csv(cfg.data.network, "network") if cfg.data.network else None
    ds = ds_mod.align_modalities(static, dynamic, network)
    if holdout not in ds.family_vocabulary:
        raise ConfigError(f"holdout family {holdout!r} not present in the data")
    if holdout == cfg.benign_label:
        raise ConfigError("the benign label cannot be the holdout")
    ds = ds_mod.split_grouped(ds, cfg.split_ratios, seeds["split"])
    # Quarantine: every holdout sample is reassigned to test before
    # standardization, so train statistics never see it.
    assignment = dict(ds.split_assignment)
    holdout_hashes = {s.sample_hash for s in ds.samples if s.family == holdout}
    for h in holdout_hashes:
        assignment[h] = "test"
    ds = replace(ds, split_assignment=assignment)
    ds, _stats = ds_mod.standardize_features(ds)

    trained_vocab = tuple(f for f in ds.family_vocabulary if f != holdout)
    audit: set[str] = set()
    dcaes = {m: _train_dcae_for(ds, m, cfg, seeds[f"dcae_{m}"], audit) for m in ds_mod.MODALITIES}

    rows = {}
    for split in ds_mod.SPLITS:
        rows[split], _ = _fused_rows(ds, dcaes, split)
    train_rows = [r for r in rows["train"] if r[1] != holdout]
    val_rows = [r for r in rows["val"] if r[1] != holdout]
    eval_rows = [r for r in rows["test"] if r[1] == holdout or r[1] == cfg.benign_label]
    train_rows = _balance_rows(train_rows, cfg.balance_target, seeds["balance"])
    train = _rowset(train_rows)
    val = _rowset(val_rows)
    evalset = _rowset(eval_rows)

    counts = {f: train.families.count(f) for f in trained_vocab}
    weights_map = ds_mod.inverse_frequency_weights(counts)
    model = clf_mod.new_classifier(
        input_dim=train.X.shape[1],
        family_vocabulary=trained_vocab,
        class_weights=[weights_map[f] for f in trained_vocab],
        hidden_dims=cfg.classifier.hidden,
        seed=seeds["classifier"],
    )
    index = {f: i for i, f in enumerate(trained_vocab)}
    y_train = np.asarray([index[f] for f in train.families])
    y_val = np.asarray([index[f] for f in val.families])
    rng = np.random.default_rng(seeds["classifier"])

    calibration_hashes = set(val.hashes)
    epoch_rows = []
    best = None
    with open(run_dir / "epoch_reports.jsonl", "w", encoding="utf-8") as reports:
        for epoch in range(1, cfg.epochs + 1):
            model, _ = clf_mod.train_epoch(
                model,
                train.X,
                y_train,
                lr=cfg.classifier.lr,
                batch_size=cfg.classifier.batch_size,
                rng=rng,
                weight_decay=cfg.classifier.weight_decay,
                sample_hashes=train.hashes,
                audit=audit,
            )
            cal = cal_mod.fit_calibration("temperature", clf_mod.logits_of(model, val.X), y_val)
            probs = cal_mod.apply_calibration(cal, clf_mod.logits_of(model, evalset.X))
            preds = []
            for i in range(probs.shape[0]):
                k = int(np.argmax(probs[i]))
                preds.append(
                    Prediction(
                        sample_hash=evalset.hashes[i],
                        probs=probs[i],
                        predicted=k,
                        confidence=float(probs[i, k]),
                    )
                )
            abstain = cal_mod.abstain_filter(preds, cfg.abstain_tau)
            # Binary mapping: predicted benign vs any ransomware family.
            binary_confusion = np.zeros((2, 2), dtype=np.int64)
            kept_correct = []
            holdout_total = 0
            holdout_kept = 0
            for i, p in enumerate(preds):
                if evalset.families[i] == holdout:
                    holdout_total += 1
                    holdout_kept += int(abstain.decisions[i].kept)
                if not abstain.decisions[i].kept:
                    continue
                true_b = 0 if evalset.families[i] == cfg.benign_label else 1
                pred_b = 0 if trained_vocab[p.predicted] == cfg.benign_label else 1
                binary_confusion[true_b, pred_b] += 1
                kept_correct.append(true_b == pred_b)
            if kept_correct:
                f1 = metrics_mod.macro_f1(binary_confusion)
                kept_accuracy = float(np.mean(kept_correct))
            else:
                f1 = None
                kept_accuracy = None
            # Coverage and abstention are the holdout family's, as in a
            # per-family zero-day table; the benign rows exist to give the
            # binary F1 and kept-accuracy a negative class.
            coverage = holdout_kept / holdout_total if holdout_total else 0.0
            row = {
                "epoch": epoch,
                "holdout": holdout,
                "binary_macro_f1": f1,
                "coverage": coverage,
                "abstention_rate": 1.0 - coverage,
                "eval_coverage": abstain.coverage,
                "eval_abstention_rate": abstain.abstention_rate,
                "kept_accuracy": kept_accuracy,
                "abstain_all": not abstain.kept,
                "temperature": cal.temperature,
            }
            epoch_rows.append(row)
            reports.write(_report_line(row) + "\n")
            if f1 is not None and (best is None or f1 > best["binary_macro_f1"]):
                best = row

    leak_train = audit & holdout_hashes
    leak_cal = calibration_hashes & holdout_hashes
    if leak_train or leak_cal:
        raise RunError("holdout leaked into training or calibration")
    report = {
        "holdout": holdout,
        "strategy": "zero_day",
        "seed": seed,
        "epochs": cfg.epochs,
        "tau": cfg.abstain_tau,
        "eval_counts": {
            "holdout": sum(1 for f in evalset.families if f == holdout),
            "benign": sum(1 for f in evalset.families if f == cfg.benign_label),
        },
        "best": best,
        "final": epoch_rows[-1],
        "rows": epoch_rows,
        "audit": {
            "holdout_samples": len(holdout_hashes),
            "train_hash_count": len(audit),
            "holdout_in_train": len(leak_train),
            "holdout_in_calibration": len(leak_cal),
        },
    }
    with open(run_dir / "zero_day_report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    report["run_dir"] = str(run_dir)
    return report


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def export_reports(run_dir: str | Path) -> Path:
    """Write CSV views of a run directory into <run_dir>/exports.

    Exports whatever exists: per-epoch metrics, agent scores, reliability
    bins and a plain-text summary.  Incomplete runs (no final summary) are
    flagged in the export manifest rather than failing.
    """
    run_dir = Path(run_dir)
    reports_path = run_dir / "epoch_reports.jsonl"
    if not reports_path.exists():
        raise ConfigError(f"{run_dir} has no epoch_reports.jsonl")
    out = run_dir / "exports"
    out.mkdir(exist_ok=True)
    files = []

    rows = []
    with open(reports_path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))

    metric_keys = ["epoch", "macro_f1", "accuracy", "ece", "nll", "mean_margin", "calibration_arm"]
    with open(out / "metrics.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(metric_keys) + "\n")
        for r in rows:
            fh.write(",".join(str(r.get(k, "")) for k in metric_keys) + "\n")
    files.append("metrics.csv")

    agent_rows = [r for r in rows if r.get("agent")]
    if agent_rows:

        def cell(value) -> str:
            return "" if value is None else str(value)

        with open(out / "agent_scores.csv", "w", encoding="utf-8", newline="") as fh:
            fh.write("epoch,assistance,critic,composite,clarity,jargon\n")
            for r in agent_rows:
                a = r["agent"]
                fh.write(
                    f"{r['epoch']},{cell(a.get('assistance_quality'))},{cell(a.get('critic_quality'))},"
                    f"{a['composite']},{a['clarity']},{a['jargon']}\n"
                )
        files.append("agent_scores.csv")

    summary_path = run_dir / "final_summary.json"
    partial = not summary_path.exists()
    if not partial:
        with open(summary_path, "r", encoding="utf-8") as fh:
            summary = json.load(fh)
        bins = summary.get("reliability_bins", [])
        if bins:
            with open(out / "reliability_bins.csv", "w", encoding="utf-8", newline="") as fh:
                fh.write("bin_index,lower,upper,count,mean_confidence,accuracy\n")
                for b in bins:
                    fh.write(
                        f"{b['bin_index']},{b['lower']},{b['upper']},{b['count']},"
                        f"{b['mean_confidence']},{b['accuracy']}\n"
                    )
            files.append("reliability_bins.csv")
        with open(out / "summary.txt", "w", encoding="utf-8") as fh:
            test = summary.get("test", {})
            fh.write(f"strategy: {summary.get('strategy')}\n")
            fh.write(f"seed: {summary.get('seed')}\n")
            for k in ("macro_f1", "accuracy", "ece", "nll"):
                if k in test:
                    fh.write(f"test_{k}: {test[k]}\n")
            abst = summary.get("abstention", {})
            for k in ("tau", "coverage", "abstention_rate", "kept_accuracy"):
                if k in abst:
                    fh.write(f"{k}: {abst[k]}\n")
        files.append("summary.txt")

    manifest = {"partial": partial, "files": files}
    with open(out / "MANIFEST.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return out
