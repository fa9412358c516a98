"""Advisory agent loop that reads metrics and reshapes training emphasis.

Three roles run once per epoch: an analyst that narrates the epoch, a
critic that issues a structured verdict (with a second "name the weak
families" pass), and a predictor that forecasts the next epoch.  Roles can
be served by a chat-completion endpoint; every role also has a
deterministic rule-based fallback so the loop degrades gracefully and runs
bit-reproducibly offline.  The loop only ever emits control signals —
sampling emphasis, escalation flags, calibration-arm choices — and never
touches model weights.

Dialogue quality is scored per epoch: a clarity score (share of
non-redundant tokens), a jargon score (share of tokens outside a hedge
lexicon), and a composite 0.5 * macro-F1 + 0.3 * jargon + 0.2 * cosine
similarity between consecutive epochs' rationale embeddings.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
from dataclasses import dataclass, field, replace
from importlib import resources as importlib_resources
from typing import Callable, Mapping, Sequence

import numpy as np

ENV_LLM_URL = "MMRA_LLM_URL"
ENV_LLM_MODEL = "MMRA_LLM_MODEL"
ENV_LLM_TIMEOUT_S = "MMRA_LLM_TIMEOUT_S"

DEFAULT_TIMEOUT_S = 30.0

GUARDRAIL_TOP1 = 0.55
GUARDRAIL_MARGIN = 0.10

RELIABILITY_INIT = 0.5
RELIABILITY_STEP = 0.1

DEFAULT_GAMMA = 1.0

EMBED_DIM = 256

UCB_C = math.sqrt(2.0)

DEFAULT_ARMS = ("identity", "temperature", "vector")
BLEND_ARMS = ("blend_0.00", "blend_0.25", "blend_0.50", "blend_0.75", "blend_1.00")

COMPOSITE_WEIGHTS = (0.5, 0.3, 0.2)

ROLE_ANALYST = "analyst"
ROLE_CRITIC = "critic"
ROLE_CRITIC_PLUS = "critic_plus"
ROLE_PREDICTOR = "predictor"


def _load_lexicon(name: str) -> frozenset[str]:
    text = importlib_resources.files("mmra.resources").joinpath(name).read_text("utf-8")
    words = set()
    for line in text.splitlines():
        line = line.strip().lower()
        if line and not line.startswith("#"):
            words.add(line)
    return frozenset(words)


_STOPWORDS: frozenset[str] | None = None
_JARGON: frozenset[str] | None = None


def stopword_lexicon() -> frozenset[str]:
    global _STOPWORDS
    if _STOPWORDS is None:
        _STOPWORDS = _load_lexicon("stopwords.txt")
    return _STOPWORDS


def jargon_lexicon() -> frozenset[str]:
    global _JARGON
    if _JARGON is None:
        _JARGON = _load_lexicon("jargon.txt")
    return _JARGON


def tokenize(text: str) -> list[str]:
    """Lowercase tokens split on runs of non-alphanumeric characters."""
    return [t for t in re.split(r"[^0-9a-zA-Z]+", text.lower()) if t]


# ---------------------------------------------------------------------------
# Dialogue quality scores
# ---------------------------------------------------------------------------

def clarity_score(text: str) -> float:
    """1 - redundant/total where a token is redundant if it is a stopword
    or an exact repeat of an earlier token in the same message.  Empty text
    scores 1.0."""
    tokens = tokenize(text)
    if not tokens:
        return 1.0
    stop = stopword_lexicon()
    seen: set[str] = set()
    redundant = 0
    for t in tokens:
        if t in stop or t in seen:
            redundant += 1
        seen.add(t)
    return 1.0 - redundant / len(tokens)


def jargon_score(text: str) -> float:
    """1 - jargon/total against the hedge lexicon; empty text scores 1.0."""
    tokens = tokenize(text)
    if not tokens:
        return 1.0
    lex = jargon_lexicon()
    hits = sum(1 for t in tokens if t in lex)
    return 1.0 - hits / len(tokens)


def _token_bucket(token: str) -> int:
    # Stable across processes: first 8 bytes of the token's SHA-1, big endian.
    digest = hashlib.sha1(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % EMBED_DIM


def rationale_embed(text: str) -> np.ndarray:
    """256-dim hashed term-frequency embedding, L2-normalized.

    The bucket of a token is derived from its SHA-1 digest, so embeddings
    are stable across runs and machines.  Text with no tokens maps to the
    zero vector.
    """
    vec = np.zeros(EMBED_DIM)
    for t in tokenize(text):
        vec[_token_bucket(t)] += 1.0
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def cosine01(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity clipped to [0, 1].

    Zero-vector convention: 1.0 when both vectors are zero (a silent
    rationale is perfectly consistent with itself), 0.0 against anything
    else.
    """
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 and nv == 0.0:
        return 1.0
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(float(u @ v) / (nu * nv), 0.0, 1.0))


def composite_score(
    macro_f1: float,
    jargon: float,
    rationale_now: np.ndarray,
    rationale_prev: np.ndarray | None,
) -> float:
    """0.5 * macro-F1 + 0.3 * jargon + 0.2 * rationale-trend cosine.

    The first epoch has no previous rationale and uses cosine 1 by
    convention.
    """
    cos = 1.0 if rationale_prev is None else cosine01(rationale_now, rationale_prev)
    w_f1, w_jargon, w_cos = COMPOSITE_WEIGHTS
    return w_f1 * macro_f1 + w_jargon * jargon + w_cos * cos


# ---------------------------------------------------------------------------
# Epoch summary and guardrail
# ---------------------------------------------------------------------------

@dataclass
class EpochSummary:
    """Metrics handed to the agents after each training epoch."""

    epoch: int
    macro_f1: float
    accuracy: float
    ece: float
    mean_margin: float
    per_family_f1: dict[str, float]
    delta_macro_f1: float = 0.0
    delta_accuracy: float = 0.0
    delta_ece: float = 0.0

    def __post_init__(self) -> None:
        values = [
            self.macro_f1,
            self.accuracy,
            self.ece,
            self.mean_margin,
            self.delta_macro_f1,
            self.delta_accuracy,
            self.delta_ece,
            *self.per_family_f1.values(),
        ]
        if not all(math.isfinite(v) for v in values):
            raise ValueError("epoch summary metrics must be finite")
        if not self.per_family_f1:
            raise ValueError("per-family F1 map must not be empty")


def guardrail_escalate(top1: float, margin: float) -> bool:
    """Escalate when top-1 accuracy < 0.55 or the top-2 margin < 0.10."""
    return top1 < GUARDRAIL_TOP1 or margin < GUARDRAIL_MARGIN


def weakest_families(per_family_f1: Mapping[str, float], k: int = 2) -> list[str]:
    """The k lowest-F1 families, ties broken by map order."""
    items = list(per_family_f1.items())
    order = sorted(range(len(items)), key=lambda i: (items[i][1], i))
    return [items[i][0] for i in order[:k]]


def _best_family(per_family_f1: Mapping[str, float]) -> tuple[int, str, float]:
    items = list(per_family_f1.items())
    best = max(range(len(items)), key=lambda i: (items[i][1], -i))
    return best, items[best][0], items[best][1]


# ---------------------------------------------------------------------------
# Chat endpoint with deterministic fallback
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EndpointConfig:
    url: str | None
    model: str = "default"
    timeout_s: float = DEFAULT_TIMEOUT_S
    decoding_temperature: float = 0.0

    @staticmethod
    def from_env() -> "EndpointConfig":
        return EndpointConfig(
            url=os.environ.get(ENV_LLM_URL),
            model=os.environ.get(ENV_LLM_MODEL, "default"),
            timeout_s=float(os.environ.get(ENV_LLM_TIMEOUT_S, str(DEFAULT_TIMEOUT_S))),
        )


@dataclass
class ChatReply:
    text: str
    source: str  # "llm" | "fallback"


@dataclass(frozen=True)
class AgentConfig:
    mode: str = "fallback"  # "fallback" | "llm"
    endpoint: EndpointConfig | None = None
    gamma: float = DEFAULT_GAMMA

    def resolved_endpoint(self) -> EndpointConfig | None:
        if self.mode != "llm":
            return None
        return self.endpoint if self.endpoint is not None else EndpointConfig.from_env()


def llm_chat(
    endpoint: EndpointConfig | None,
    system_prompt: str,
    user_prompt: str,
    fallback: Callable[[], str],
) -> ChatReply:
    """POST a chat-completion request; on any failure, use the fallback.

    One retry is attempted after a malformed or failed response; the reply
    is tagged with its source so downstream logs distinguish endpoint text
    from rule-generated text.  The fallback itself never fails.
    """
    if endpoint is None or not endpoint.url:
        return ChatReply(text=fallback(), source="fallback")
    import requests

    payload = {
        "model": endpoint.model,
        "messages": [
            {"role": "system", "content": system_prompt},
            {"role": "user", "content": user_prompt},
        ],
        "temperature": endpoint.decoding_temperature,
    }
    for _attempt in range(2):
        try:
            response = requests.post(endpoint.url, json=payload, timeout=endpoint.timeout_s)
            response.raise_for_status()
            content = response.json()["choices"][0]["message"]["content"]
            if isinstance(content, str) and content.strip():
                return ChatReply(text=content, source="llm")
        except Exception:
            continue
    return ChatReply(text=fallback(), source="fallback")


# ---------------------------------------------------------------------------
# Role messages
# ---------------------------------------------------------------------------

ANALYST_REQUIRED_FIELDS = ("Analysis:", "Prediction:", "Next step:")

CRITIC_FIELDS = ("Flaw:", "Strength:", "Missing Element:", "Guardrail:")


def _fallback_analyst(summary: EpochSummary) -> str:
    idx, name, f1 = _best_family(summary.per_family_f1)
    escalate = guardrail_escalate(summary.accuracy, summary.mean_margin)
    if escalate:
        tail = (
            "margins are unstable and noisy, family boundaries erratic and "
            "brittle, confidence volatile, shaky and precarious; the separation "
            "picture stays inconclusive, indeterminate and opaque. Escalate and "
            "rebalance sampling."
        )
    else:
        tail = "no escalation needed; proceed with further analysis."
    return (
        f"Analysis: epoch {summary.epoch} validation run reached a top-1 score of "
        f"{summary.accuracy * 100:.1f}% with macro F1 {summary.macro_f1:.3f} and "
        f"calibration error {summary.ece:.3f}; strongest family is {name}.\n"
        f"Prediction: {idx} | Confidence: {f1 * 100:.1f}%\n"
        f"Next step: {tail}"
    )


def _fallback_critic(summary: EpochSummary, analyst_text: str) -> str:
    weak = weakest_families(summary.per_family_f1, 2)
    worst = weak[0]
    worst_f1 = summary.per_family_f1[worst]
    _, best_name, best_f1 = _best_family(summary.per_family_f1)
    escalate = guardrail_escalate(summary.accuracy, summary.mean_margin)
    if escalate:
        flaw_tail = (
            "confidence remains erratic and volatile, margins noisy, brittle and "
            "precarious, class structure unstable, ambiguous, chaotic and "
            "inconclusive; the whole decision surface looks shaky and turbulent."
        )
    else:
        flaw_tail = "residual confusion persists at class boundaries."
    if summary.ece > 0.1:
        missing = (
            "a calibration audit; estimates look degraded and uncertain, with "
            "anomalous drift and an opaque, deteriorating reliability profile."
        )
    else:
        missing = "a margin audit across the remaining families."
    return (
        f"Flaw: {worst} trails with F1 {worst_f1:.2f}; {flaw_tail}\n"
        f"Strength: {best_name} holds at F1 {best_f1:.2f} on a top-1 score of "
        f"{summary.accuracy * 100:.1f}%.\n"
        f"Missing Element: {missing}\n"
        f"Guardrail: escalate when top-1 falls below 55% or the margin drops below 10%."
    )


def _fallback_critic_plus(summary: EpochSummary) -> str:
    weak = weakest_families(summary.per_family_f1, 2)
    return "Weak families: " + ", ".join(weak) + ". Concentrate sampling there."


def _fallback_predictor(summary: EpochSummary) -> str:
    trend = summary.delta_macro_f1
    if trend > 0.005:
        tail = "expect continued improvement, with weak families closing the gap."
    elif trend < -0.005:
        tail = (
            "the trajectory looks volatile, erratic and possibly regressing; "
            "further degraded or deteriorating scores are likely and the outlook "
            "stays uncertain and precarious without rebalancing."
        )
    else:
        tail = "the outlook is neutral; scores should hold steady next epoch."
    return (
        f"Forecast: macro F1 ({summary.macro_f1:.3f}) with calibration error "
        f"{summary.ece:.3f}; {tail}"
    )


def _summary_digest(summary: EpochSummary) -> str:
    fam = ", ".join(f"{k}={v:.3f}" for k, v in summary.per_family_f1.items())
    return (
        f"epoch={summary.epoch} accuracy={summary.accuracy:.4f} "
        f"macro_f1={summary.macro_f1:.4f} ece={summary.ece:.4f} "
        f"mean_margin={summary.mean_margin:.4f} per_family_f1=[{fam}]"
    )


def analyst_message(summary: EpochSummary, config: AgentConfig) -> ChatReply:
    """Narrate the epoch.  LLM replies missing any of the required field
    labels (Analysis / Prediction / Next step) are replaced by the fallback."""
    fallback = lambda: _fallback_analyst(summary)
    reply = llm_chat(
        config.resolved_endpoint(),
        "You are a malware-analysis assistant. Respond with exactly three "
        "lines labelled 'Analysis:', 'Prediction: <class index> | Confidence: "
        "<percent>' and 'Next step:'.",
        _summary_digest(summary),
        fallback,
    )
    if reply.source == "llm" and not all(f in reply.text for f in ANALYST_REQUIRED_FIELDS):
        return ChatReply(text=fallback(), source="fallback")
    return reply


@dataclass
class CriticVerdict:
    flaw: str
    strength: str
    missing_element: str
    guardrail: str
    escalate: bool
    target_families: tuple[str, ...] = ()


def _parse_critic_fields(text: str) -> dict[str, str] | None:
    fields: dict[str, str] = {}
    for label in CRITIC_FIELDS:
        pattern = re.escape(label) + r"\s*(.*?)(?=(?:" + "|".join(
            re.escape(f) for f in CRITIC_FIELDS
        ) + r")|\Z)"
        m = re.search(pattern, text, flags=re.DOTALL)
        if not m or not m.group(1).strip():
            return None
        fields[label] = m.group(1).strip()
    return fields


def critic_review(
    analyst_text: str, summary: EpochSummary, config: AgentConfig
) -> tuple[CriticVerdict, ChatReply]:
    """Structured four-field critique of the analyst's reading.

    The escalation decision is always computed in code from the guardrail
    predicate, never taken from generated text.  Unparseable LLM replies
    fall back to the rule-based verdict.
    """
    fallback = lambda: _fallback_critic(summary, analyst_text)
    reply = llm_chat(
        config.resolved_endpoint(),
        "You review a malware classifier's epoch report. Respond with four "
        "lines labelled 'Flaw:', 'Strength:', 'Missing Element:' and "
        "'Guardrail:'.",
        _summary_digest(summary) + "\nAnalyst said:\n" + analyst_text,
        fallback,
    )
    fields = _parse_critic_fields(reply.text)
    if fields is None:
        reply = ChatReply(text=fallback(), source="fallback")
        fields = _parse_critic_fields(reply.text)
        assert fields is not None
    verdict = CriticVerdict(
        flaw=fields["Flaw:"],
        strength=fields["Strength:"],
        missing_element=fields["Missing Element:"],
        guardrail=fields["Guardrail:"],
        escalate=guardrail_escalate(summary.accuracy, summary.mean_margin),
    )
    return verdict, reply


def critic_plus_review(summary: EpochSummary, config: AgentConfig) -> ChatReply:
    """Second critic pass whose only job is to name the weak families."""
    fallback = lambda: _fallback_critic_plus(summary)
    return llm_chat(
        config.resolved_endpoint(),
        "Name the weak families that deserve extra sampling, as a short "
        "sentence listing family names verbatim.",
        _summary_digest(summary),
        fallback,
    )


def predictor_forecast(summary: EpochSummary, config: AgentConfig) -> ChatReply:
    """Short forward-looking forecast; informational only."""
    fallback = lambda: _fallback_predictor(summary)
    return llm_chat(
        config.resolved_endpoint(),
        "Forecast the classifier's next epoch in one or two sentences, "
        "starting with 'Forecast:'.",
        _summary_digest(summary),
        fallback,
    )


def extract_target_families(text: str, vocabulary: Sequence[str]) -> set[str]:
    """Case-insensitive whole-word scan of free text for family names."""
    found: set[str] = set()
    for name in vocabulary:
        pattern = r"(?<![0-9A-Za-z])" + re.escape(name) + r"(?![0-9A-Za-z])"
        if re.search(pattern, text, flags=re.IGNORECASE):
            found.add(name)
    return found


# ---------------------------------------------------------------------------
# Controller state: reliability, sampling emphasis, UCB arm statistics
# ---------------------------------------------------------------------------

@dataclass
class UcbState:
    arms: tuple[str, ...]
    counts: tuple[int, ...]
    means: tuple[float, ...]

    @staticmethod
    def fresh(arms: Sequence[str] = DEFAULT_ARMS) -> "UcbState":
        arms = tuple(arms)
        if not arms:
            raise ValueError("need at least one arm")
        return UcbState(arms=arms, counts=(0,) * len(arms), means=(0.0,) * len(arms))


def ucb_select(state: UcbState) -> int:
    """UCB1 with c = sqrt(2): unpulled arms first, then the bonus-augmented
    mean; ties resolve to the lowest arm index."""
    for i, c in enumerate(state.counts):
        if c == 0:
            return i
    t = sum(state.counts)
    scores = [
        state.means[i] + UCB_C * math.sqrt(math.log(t) / state.counts[i])
        for i in range(len(state.arms))
    ]
    best = 0
    for i in range(1, len(scores)):
        if scores[i] > scores[best]:
            best = i
    return best


def ucb_update(state: UcbState, arm: int, reward: float) -> UcbState:
    counts = list(state.counts)
    means = list(state.means)
    counts[arm] += 1
    means[arm] += (reward - means[arm]) / counts[arm]
    return UcbState(arms=state.arms, counts=tuple(counts), means=tuple(means))


@dataclass
class ControllerState:
    critic_reliab: float = RELIABILITY_INIT
    oversample_targets: tuple[str, ...] = ()
    prev_targets: tuple[str, ...] = ()
    prev_target_f1: dict[str, float] = field(default_factory=dict)
    ucb: UcbState = field(default_factory=UcbState.fresh)
    prev_role_text: dict[str, str] = field(default_factory=dict)
    prev_dialogue_text: str | None = None


def update_reliability(
    state: ControllerState, per_family_f1: Mapping[str, float]
) -> ControllerState:
    """Move critic reliability by 0.1 * sign(mean F1 change of the families
    the critic targeted last epoch), clamped to [0, 1].  Without previous
    targets the reliability is unchanged."""
    if not state.prev_targets:
        return state
    deltas = [
        per_family_f1[f] - state.prev_target_f1.get(f, 0.0)
        for f in state.prev_targets
        if f in per_family_f1
    ]
    if not deltas:
        return state
    mean_delta = sum(deltas) / len(deltas)
    sign = (mean_delta > 0) - (mean_delta < 0)
    reliab = min(1.0, max(0.0, state.critic_reliab + RELIABILITY_STEP * sign))
    return replace(state, critic_reliab=reliab)


def oversample_weights(
    targets: Sequence[str],
    reliability: float,
    families: Sequence[str],
    base_weights: np.ndarray | None = None,
    gamma: float = DEFAULT_GAMMA,
) -> np.ndarray:
    """Per-sample distribution boosting targeted families.

    Samples whose family is targeted get base weight * (1 + gamma *
    reliability); the result is renormalized to sum to 1.
    """
    n = len(families)
    if n == 0:
        raise ValueError("no samples to weight")
    w = (
        np.ones(n)
        if base_weights is None
        else np.asarray(base_weights, dtype=np.float64).copy()
    )
    if w.shape != (n,):
        raise ValueError("one base weight per sample required")
    if (w < 0).any():
        raise ValueError("base weights must be non-negative")
    target_set = set(targets)
    boost = 1.0 + gamma * reliability
    for i, fam in enumerate(families):
        if fam in target_set:
            w[i] *= boost
    total = w.sum()
    if total <= 0:
        raise ValueError("all weights vanished")
    return w / total


# ---------------------------------------------------------------------------
# The per-epoch cycle
# ---------------------------------------------------------------------------

@dataclass
class DialogueRecord:
    epoch: int
    role: str
    source: str
    text: str
    clarity: float
    jargon: float


@dataclass
class ControlSignals:
    escalate: bool
    targets: tuple[str, ...]
    critic_reliab: float
    sampling_weights: np.ndarray | None


@dataclass
class AgentScores:
    clarity: float
    jargon: float
    composite: float
    assistance_quality: float | None
    critic_quality: float | None


@dataclass
class CycleResult:
    signals: ControlSignals
    messages: list[DialogueRecord]
    scores: AgentScores
    state: ControllerState


def _record(epoch: int, role: str, reply: ChatReply) -> DialogueRecord:
    return DialogueRecord(
        epoch=epoch,
        role=role,
        source=reply.source,
        text=reply.text,
        clarity=clarity_score(reply.text),
        jargon=jargon_score(reply.text),
    )


def _role_quality(
    macro_f1: float, text: str, prev_text: str | None
) -> float:
    prev_embed = None if prev_text is None else rationale_embed(prev_text)
    return composite_score(macro_f1, jargon_score(text), rationale_embed(text), prev_embed)


def run_epoch_cycle(
    summary: EpochSummary,
    state: ControllerState,
    config: AgentConfig,
    sample_families: Sequence[str] | None = None,
    base_weights: np.ndarray | None = None,
    vocabulary: Sequence[str] | None = None,
) -> CycleResult:
    """One full multi-agent pass: analyst, critic, weak-family targeting,
    reliability update, sampling emphasis, forecast, and dialogue scoring.

    Pure with respect to model parameters — the cycle sees only the metric
    summary and returns control signals.  When ``sample_families`` (and
    optionally ``base_weights``, e.g. uncertainty weights) are supplied the
    signals include a normalized per-sample sampling distribution.
    """
    vocab = tuple(vocabulary) if vocabulary is not None else tuple(summary.per_family_f1)
    analyst = analyst_message(summary, config)
    verdict, critic = critic_review(analyst.text, summary, config)
    plus = critic_plus_review(summary, config)

    targets = extract_target_families(plus.text, vocab)
    if not targets:
        targets = set(weakest_families(summary.per_family_f1, 2))
    target_tuple = tuple(sorted(targets))
    verdict.target_families = target_tuple

    state = update_reliability(state, summary.per_family_f1)
    state = replace(
        state,
        oversample_targets=target_tuple,
        prev_targets=target_tuple,
        prev_target_f1={f: summary.per_family_f1[f] for f in target_tuple if f in summary.per_family_f1},
    )

    sampling = None
    if sample_families is not None:
        sampling = oversample_weights(
            target_tuple, state.critic_reliab, sample_families, base_weights, config.gamma
        )

    predictor = predictor_forecast(summary, config)

    messages = [
        _record(summary.epoch, ROLE_ANALYST, analyst),
        _record(summary.epoch, ROLE_CRITIC, critic),
        _record(summary.epoch, ROLE_CRITIC_PLUS, plus),
        _record(summary.epoch, ROLE_PREDICTOR, predictor),
    ]
    dialogue_text = "\n".join(m.text for m in messages)
    prev_dialogue_embed = (
        None if state.prev_dialogue_text is None else rationale_embed(state.prev_dialogue_text)
    )
    composite = composite_score(
        summary.macro_f1,
        jargon_score(dialogue_text),
        rationale_embed(dialogue_text),
        prev_dialogue_embed,
    )
    scores = AgentScores(
        clarity=clarity_score(dialogue_text),
        jargon=jargon_score(dialogue_text),
        composite=composite,
        assistance_quality=_role_quality(
            summary.macro_f1, predictor.text, state.prev_role_text.get(ROLE_PREDICTOR)
        ),
        critic_quality=_role_quality(
            summary.macro_f1, critic.text, state.prev_role_text.get(ROLE_CRITIC)
        ),
    )
    state = replace(
        state,
        prev_role_text={
            ROLE_ANALYST: analyst.text,
            ROLE_CRITIC: critic.text,
            ROLE_CRITIC_PLUS: plus.text,
            ROLE_PREDICTOR: predictor.text,
        },
        prev_dialogue_text=dialogue_text,
    )
    signals = ControlSignals(
        escalate=verdict.escalate,
        targets=target_tuple,
        critic_reliab=state.critic_reliab,
        sampling_weights=sampling,
    )
    return CycleResult(signals=signals, messages=messages, scores=scores, state=state)


def single_agent_cycle(
    summary: EpochSummary,
    state: ControllerState,
    config: AgentConfig,
    sample_families: Sequence[str] | None = None,
    vocabulary: Sequence[str] | None = None,
) -> CycleResult:
    """Reduced loop with the analyst alone issuing weak-family targets.

    No critic pass, no reliability adaptation (the boost stays at the
    initial reliability), no uncertainty base weights, no bandit over
    calibration arms.
    """
    vocab = tuple(vocabulary) if vocabulary is not None else tuple(summary.per_family_f1)
    analyst = analyst_message(summary, config)
    targets = extract_target_families(analyst.text, vocab)
    if not targets:
        targets = set(weakest_families(summary.per_family_f1, 2))
    target_tuple = tuple(sorted(targets))

    sampling = None
    if sample_families is not None:
        sampling = oversample_weights(
            target_tuple, RELIABILITY_INIT, sample_families, None, config.gamma
        )

    messages = [_record(summary.epoch, ROLE_ANALYST, analyst)]
    prev_embed = (
        None if state.prev_dialogue_text is None else rationale_embed(state.prev_dialogue_text)
    )
    composite = composite_score(
        summary.macro_f1,
        jargon_score(analyst.text),
        rationale_embed(analyst.text),
        prev_embed,
    )
    scores = AgentScores(
        clarity=clarity_score(analyst.text),
        jargon=jargon_score(analyst.text),
        composite=composite,
        assistance_quality=None,
        critic_quality=None,
    )
    state = replace(
        state,
        oversample_targets=target_tuple,
        prev_dialogue_text=analyst.text,
        prev_role_text={ROLE_ANALYST: analyst.text},
    )
    signals = ControlSignals(
        escalate=guardrail_escalate(summary.accuracy, summary.mean_margin),
        targets=target_tuple,
        critic_reliab=RELIABILITY_INIT,
        sampling_weights=sampling,
    )
    return CycleResult(signals=signals, messages=messages, scores=scores, state=state)


def dialogue_jsonl_line(record: DialogueRecord) -> str:
    """Stable one-line JSON rendering for dialogue.jsonl."""
    return json.dumps(
        {
            "epoch": record.epoch,
            "role": record.role,
            "source": record.source,
            "text": record.text,
            "scores": {"clarity": record.clarity, "jargon": record.jargon},
        },
        sort_keys=False,
    )
