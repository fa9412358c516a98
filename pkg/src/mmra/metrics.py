"""Evaluation metrics and nonparametric significance tests.

Macro-F1, expected calibration error with equal-width bins on (0, 1],
negative log-likelihood, the Wilcoxon signed-rank test (exact for small n,
normal approximation with tie correction otherwise) and the Friedman test
with mid-ranks.  The chi-square survival function is computed here from the
regularized incomplete gamma function, so no statistics package is needed
at runtime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_ECE_BINS = 15

PROB_FLOOR = 1e-12

EXACT_WILCOXON_MAX_N = 12


class MetricsError(ValueError):
    """Degenerate input for a metric or test."""


# ---------------------------------------------------------------------------
# Classification metrics
# ---------------------------------------------------------------------------

def precision_recall_f1(confusion: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class precision/recall/F1 from a confusion matrix (rows = truth).

    Empty denominators yield 0 by convention, including the F1 of a class
    whose precision and recall are both 0.
    """
    m = np.asarray(confusion, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise MetricsError("confusion matrix must be square")
    if (m < 0).any():
        raise MetricsError("confusion counts must be non-negative")
    tp = np.diag(m)
    pred_totals = m.sum(axis=0)
    true_totals = m.sum(axis=1)
    precision = np.divide(tp, pred_totals, out=np.zeros_like(tp), where=pred_totals > 0)
    recall = np.divide(tp, true_totals, out=np.zeros_like(tp), where=true_totals > 0)
    denom = precision + recall
    f1 = np.divide(
        2.0 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0
    )
    return precision, recall, f1


def per_class_f1(confusion: np.ndarray) -> np.ndarray:
    return precision_recall_f1(confusion)[2]


def macro_f1(confusion: np.ndarray) -> float:
    """Unweighted mean of per-class F1 scores."""
    f1 = per_class_f1(confusion)
    if f1.shape[0] == 0:
        raise MetricsError("empty confusion matrix")
    return float(f1.mean())


def accuracy(confusion: np.ndarray) -> float:
    m = np.asarray(confusion, dtype=np.float64)
    total = m.sum()
    if total == 0:
        raise MetricsError("confusion matrix has no samples")
    return float(np.diag(m).sum() / total)


@dataclass
class BinStats:
    bin_index: int
    lower: float
    upper: float
    count: int
    mean_confidence: float
    accuracy: float


def ece(
    confidences: Sequence[float],
    correct: Sequence[bool],
    num_bins: int = DEFAULT_ECE_BINS,
) -> tuple[float, list[BinStats]]:
    """Expected calibration error over equal-width, right-closed bins.

    Bin b covers (b/B, (b+1)/B]; every confidence in (0, 1] lands in exactly
    one bin.  ECE = sum_b (n_b / N) * |acc(b) - conf(b)|.  Empty bins are
    reported with zero count and contribute nothing.
    """
    if num_bins < 1:
        raise MetricsError("need at least one bin")
    conf = np.asarray(confidences, dtype=np.float64)
    hit = np.asarray(correct, dtype=np.float64)
    if conf.shape != hit.shape:
        raise MetricsError("one correctness flag per confidence required")
    if conf.shape[0] == 0:
        raise MetricsError("no predictions")
    if (conf <= 0).any() or (conf > 1).any():
        raise MetricsError("confidences must lie in (0, 1]")
    idx = np.ceil(conf * num_bins).astype(int) - 1
    n = conf.shape[0]
    value = 0.0
    bins: list[BinStats] = []
    for b in range(num_bins):
        mask = idx == b
        count = int(mask.sum())
        if count:
            mean_conf = float(conf[mask].mean())
            acc = float(hit[mask].mean())
            value += (count / n) * abs(acc - mean_conf)
        else:
            mean_conf, acc = 0.0, 0.0
        bins.append(
            BinStats(
                bin_index=b,
                lower=b / num_bins,
                upper=(b + 1) / num_bins,
                count=count,
                mean_confidence=mean_conf,
                accuracy=acc,
            )
        )
    return float(value), bins


def nll(true_class_probs: Sequence[float]) -> float:
    """Mean -ln p of the true class, floored at 1e-12."""
    p = np.asarray(true_class_probs, dtype=np.float64)
    if p.shape[0] == 0:
        raise MetricsError("no probabilities")
    return float(-np.log(np.maximum(p, PROB_FLOOR)).mean())


# ---------------------------------------------------------------------------
# Rank statistics
# ---------------------------------------------------------------------------

def _midranks(values: np.ndarray) -> np.ndarray:
    """Average ranks (1-based) with ties sharing their mid-rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        rank = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = rank
        i = j + 1
    return ranks


@dataclass
class WilcoxonResult:
    w_plus: float
    p_value: float
    z: float
    effect_size_r: float
    n: int
    method: str


def _exact_wilcoxon_p(ranks2: np.ndarray, w_plus2: int) -> float:
    """Two-sided exact p via the distribution of W+ over all sign choices.

    ``ranks2`` are the doubled ranks (integers even with mid-rank ties) and
    ``w_plus2`` the doubled observed statistic.  Dynamic programming over
    achievable doubled sums enumerates the full null distribution.
    """
    total = int(ranks2.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in ranks2:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    n_outcomes = counts.sum()
    p_le = counts[: w_plus2 + 1].sum() / n_outcomes
    p_ge = counts[w_plus2:].sum() / n_outcomes
    return float(min(1.0, 2.0 * min(p_le, p_ge)))


def wilcoxon_signed_rank(x: Sequence[float], y: Sequence[float]) -> WilcoxonResult:
    """Paired two-sided Wilcoxon signed-rank test.

    Zero differences are dropped.  With n <= 12 effective pairs the p-value
    is exact (full enumeration of the sign distribution); above that a
    normal approximation with tie correction is used.  The effect size
    r = |Z| / sqrt(n) always comes from the normal-approximation Z.
    """
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise MetricsError("x and y must be 1-D with equal length")
    d = a - b
    d = d[d != 0.0]
    n = d.shape[0]
    if n == 0:
        raise MetricsError("all paired differences are zero")
    ranks = _midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())

    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    tie_term = float(((tie_counts**3 - tie_counts).sum()) / 48.0)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
    z = 0.0 if var <= 0 else (w_plus - mean) / math.sqrt(var)
    r = abs(z) / math.sqrt(n)

    if n <= EXACT_WILCOXON_MAX_N:
        ranks2 = np.rint(2.0 * ranks).astype(np.int64)
        p = _exact_wilcoxon_p(ranks2, int(round(2.0 * w_plus)))
        method = "exact"
    else:
        p = math.erfc(abs(z) / math.sqrt(2.0))
        method = "normal"
    return WilcoxonResult(
        w_plus=w_plus, p_value=p, z=z, effect_size_r=r, n=n, method=method
    )


@dataclass
class FriedmanResult:
    chi2: float
    p_value: float
    dof: int


def friedman_test(scores: np.ndarray) -> FriedmanResult:
    """Friedman rank test over an (n blocks x k treatments) score matrix.

    Mid-ranks within each block, statistic
    chi2 = 12 / (n k (k+1)) * sum_j R_j^2 - 3 n (k+1) on k-1 degrees of
    freedom.  All-equal blocks give chi2 = 0, p = 1.
    """
    m = np.asarray(scores, dtype=np.float64)
    if m.ndim != 2:
        raise MetricsError("scores must be an (n, k) matrix")
    n, k = m.shape
    if n < 2 or k < 2:
        raise MetricsError("need at least 2 blocks and 2 treatments")
    ranks = np.stack([_midranks(row) for row in m])
    col_sums = ranks.sum(axis=0)
    chi2 = 12.0 / (n * k * (k + 1)) * float((col_sums**2).sum()) - 3.0 * n * (k + 1)
    chi2 = max(chi2, 0.0)
    return FriedmanResult(chi2=chi2, p_value=chi2_sf(chi2, k - 1), dof=k - 1)


# ---------------------------------------------------------------------------
# Chi-square survival via the regularized incomplete gamma function
# ---------------------------------------------------------------------------

_GAMMA_TOL = 1e-12
_GAMMA_MAX_ITER = 10_000


def _lower_gamma_series(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x) by series, for x < a + 1."""
    term = 1.0 / a
    total = term
    denom = a
    for _ in range(_GAMMA_MAX_ITER):
        denom += 1.0
        term *= x / denom
        total += term
        if abs(term) < abs(total) * _GAMMA_TOL:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))

def _upper_gamma_cf(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) by continued fraction."""
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _GAMMA_MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_TOL:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def gammainc_upper(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) to ~1e-10 accuracy."""
    if a <= 0:
        raise MetricsError("shape parameter must be positive")
    if x < 0:
        raise MetricsError("x must be non-negative")
    if x == 0.0:
        return 1.0
    if x < a + 1.0:
        return min(1.0, max(0.0, 1.0 - _lower_gamma_series(a, x)))
    return min(1.0, max(0.0, _upper_gamma_cf(a, x)))


def chi2_sf(x: float, dof: int) -> float:
    """Survival function P(X >= x) of a chi-square with ``dof`` degrees."""
    if dof < 1:
        raise MetricsError("degrees of freedom must be >= 1")
    if x < 0:
        return 1.0
    return gammainc_upper(dof / 2.0, x / 2.0)
