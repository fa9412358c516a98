"""Classification metrics and nonparametric tests against external oracles.

scipy and sklearn appear here only as reference implementations; the
package itself never imports them.
"""
from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings, strategies as st
from sklearn.metrics import confusion_matrix, f1_score

from mmra import metrics
from conftest import ece_hand_binned, wilcoxon_enumeration


def _confusion_from(y_true, y_pred, k):
    return confusion_matrix(y_true, y_pred, labels=list(range(k))).astype(np.float64)


class TestF1:
    def test_macro_f1_matches_sklearn_on_random_labelings(self):
        rng = np.random.default_rng(0)
        for k in (2, 4, 7):
            for _ in range(20):
                y_true = rng.integers(0, k, size=60)
                y_pred = rng.integers(0, k, size=60)
                cm = _confusion_from(y_true, y_pred, k)
                ours = metrics.macro_f1(cm)
                ref = f1_score(y_true, y_pred, average="macro", zero_division=0)
                assert ours == pytest.approx(ref, abs=1e-12)

    def test_per_class_f1_zero_denominator_scores_zero(self):
        # class 2 never occurs and is never predicted: P(2)=R(2)=0 with a
        # 0/0 denominator, which must resolve to 0, not NaN
        cm = np.array([[5.0, 1.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 0.0]])
        per = metrics.per_class_f1(cm)
        assert per[2] == 0.0
        assert np.isfinite(per).all()

    def test_precision_recall_f1_hand_case(self):
        # one class: TP=9603, FN=97 (R=0.99), FP=297 (P=0.97)
        cm = np.array([[9603.0, 97.0], [297.0, 100.0]])
        p, r, f1 = metrics.precision_recall_f1(cm)
        assert p[0] == pytest.approx(9603 / 9900)
        assert r[0] == pytest.approx(9603 / 9700)
        assert f1[0] == pytest.approx(2 * p[0] * r[0] / (p[0] + r[0]))

    def test_accuracy_is_trace_over_total(self):
        cm = np.array([[3.0, 1.0], [2.0, 4.0]])
        assert metrics.accuracy(cm) == pytest.approx(7 / 10)


class TestEce:
    def test_matches_hand_binned_oracle_on_random_dumps(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            n = int(rng.integers(5, 200))
            conf = rng.random(n)
            correct = rng.random(n) < conf
            ours, _ = metrics.ece(conf, correct)
            oracle = ece_hand_binned(conf, correct)
            assert ours == pytest.approx(oracle, abs=1e-12)

    def test_bin_edges_are_right_closed(self):
        # 1/15 sits exactly on the first edge and must land in bin 0
        _, bins = metrics.ece([1.0 / 15.0], [True], num_bins=15)
        occupied = [b for b in bins if b.count]
        assert len(occupied) == 1
        assert occupied[0].bin_index == 0
        # just above the edge goes to bin 1
        _, bins = metrics.ece([1.0 / 15.0 + 1e-9], [True], num_bins=15)
        occupied = [b for b in bins if b.count]
        assert occupied[0].bin_index == 1

    def test_perfectly_calibrated_halves(self):
        # confidence 0.5 with half correct: gap zero
        conf = [0.5] * 10
        correct = [True] * 5 + [False] * 5
        value, _ = metrics.ece(conf, correct)
        assert value == pytest.approx(0.0, abs=1e-12)

    def test_reports_fifteen_bins_by_default(self):
        _, bins = metrics.ece([0.2, 0.9], [True, False])
        assert len(bins) == 15


class TestNll:
    def test_mean_negative_log_of_true_probs(self):
        probs = [0.5, 0.25]
        expected = -(math.log(0.5) + math.log(0.25)) / 2
        assert metrics.nll(probs) == pytest.approx(expected)

    def test_zero_probability_is_floored_not_infinite(self):
        value = metrics.nll([0.0])
        assert math.isfinite(value)
        assert value == pytest.approx(-math.log(1e-12))


class TestWilcoxon:
    def test_five_all_positive_pairs(self):
        x = [0.95, 0.92, 0.91, 0.96, 0.93]
        deltas = [0.05, 0.04, 0.03, 0.02, 0.01]
        y = [v - d for v, d in zip(x, deltas)]
        res = metrics.wilcoxon_signed_rank(x, y)
        assert res.method == "exact"
        assert res.w_plus == 15.0
        assert res.p_value == pytest.approx(0.0625, abs=1e-12)
        assert res.effect_size_r == pytest.approx(0.9045, abs=1e-3)

    def test_exact_p_matches_sign_enumeration(self):
        rng = np.random.default_rng(2)
        for n in range(3, 11):
            for _ in range(8):
                x = rng.normal(size=n)
                y = x + rng.normal(scale=0.8, size=n)
                # occasional exact ties in |d| to exercise mid-ranks
                if n >= 5 and rng.random() < 0.5:
                    y[1] = x[1] + (x[0] - y[0])
                if np.all(x - y == 0):
                    continue
                res = metrics.wilcoxon_signed_rank(x, y)
                w_ref, p_ref = wilcoxon_enumeration(x, y)
                assert res.w_plus == pytest.approx(w_ref, abs=1e-9)
                assert res.p_value == pytest.approx(p_ref, abs=1e-12)

    def test_zero_differences_are_dropped(self):
        x = [1.0, 2.0, 3.0, 4.0]
        y = [1.0, 1.5, 2.0, 4.0]
        res = metrics.wilcoxon_signed_rank(x, y)
        assert res.n == 2

    def test_all_zero_differences_raise(self):
        with pytest.raises(metrics.MetricsError):
            metrics.wilcoxon_signed_rank([1.0, 2.0], [1.0, 2.0])

    def test_normal_branch_z_matches_scipy(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=30)
        y = x + rng.normal(scale=0.5, size=30) + 0.3
        res = metrics.wilcoxon_signed_rank(x, y)
        assert res.method == "normal"
        ref = scipy.stats.wilcoxon(
            x, y, correction=False, alternative="two-sided", method="approx"
        )
        assert res.p_value == pytest.approx(float(ref.pvalue), abs=1e-9)

    def test_exact_threshold_is_twelve_pairs(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=12)
        y = x + rng.normal(size=12) + 0.1
        assert metrics.wilcoxon_signed_rank(x, y).method == "exact"
        x = rng.normal(size=13)
        y = x + rng.normal(size=13) + 0.1
        assert metrics.wilcoxon_signed_rank(x, y).method == "normal"

    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(
            st.tuples(
                st.floats(min_value=-5, max_value=5, allow_nan=False),
                st.floats(min_value=-5, max_value=5, allow_nan=False),
            ),
            min_size=3,
            max_size=9,
        )
    )
    def test_exact_p_in_unit_interval_and_symmetric(self, pairs):
        x = [a for a, _ in pairs]
        y = [b for _, b in pairs]
        if all(a == b for a, b in pairs):
            return
        res = metrics.wilcoxon_signed_rank(x, y)
        assert 0.0 < res.p_value <= 1.0
        flipped = metrics.wilcoxon_signed_rank(y, x)
        assert flipped.p_value == pytest.approx(res.p_value, abs=1e-12)
        assert flipped.effect_size_r == pytest.approx(res.effect_size_r, abs=1e-12)


class TestFriedman:
    def test_matches_scipy_on_random_matrices(self):
        rng = np.random.default_rng(5)
        for n, k in ((5, 3), (8, 4), (12, 7)):
            scores = rng.random((n, k))
            res = metrics.friedman_test(scores)
            ref = scipy.stats.friedmanchisquare(*[scores[:, j] for j in range(k)])
            assert res.chi2 == pytest.approx(float(ref.statistic), abs=1e-9)
            assert res.p_value == pytest.approx(float(ref.pvalue), abs=1e-9)
            assert res.dof == k - 1

    def test_identical_treatments_give_zero_statistic(self):
        scores = np.ones((6, 4)) * 0.5
        res = metrics.friedman_test(scores)
        assert res.chi2 == 0.0
        assert res.p_value == 1.0

    def test_rejects_degenerate_shapes(self):
        with pytest.raises(metrics.MetricsError):
            metrics.friedman_test(np.ones((1, 4)))
        with pytest.raises(metrics.MetricsError):
            metrics.friedman_test(np.ones((4, 1)))


class TestChi2Survival:
    def test_matches_scipy_over_grid(self):
        for dof in (1, 2, 3, 6, 10):
            for x in (0.0, 0.5, 1.0, 2.5, 5.0, 10.0, 25.0, 60.0):
                ours = metrics.chi2_sf(x, dof)
                ref = float(scipy.stats.chi2.sf(x, dof))
                assert ours == pytest.approx(ref, abs=1e-10)

    def test_upper_gamma_matches_scipy(self):
        for a in (0.5, 1.0, 2.5, 7.0):
            for x in (0.1, 1.0, 5.0, 20.0):
                ours = metrics.gammainc_upper(a, x)
                ref = float(scipy.special.gammaincc(a, x))
                assert ours == pytest.approx(ref, abs=1e-10)
