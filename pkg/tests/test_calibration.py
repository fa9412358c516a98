"""Temperature/vector scaling and confidence-threshold abstention."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmra import calibration as cal
from mmra import numerics
from mmra.classifier import Prediction


def _noisy_logits(n=400, k=4, scale=3.0, seed=0):
    """Logits that are systematically too sharp by `scale`."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, k, size=n)
    base = rng.normal(size=(n, k))
    base[np.arange(n), y] += 1.0
    return base * scale, y


class TestTemperature:
    def test_recovers_known_overconfidence_factor(self):
        logits, y = _noisy_logits(scale=3.0)
        model = cal.fit_calibration("temperature", logits, y)
        assert model.kind == "temperature"
        # dividing by T ~ 3 undoes the sharpening
        assert 2.0 < model.temperature < 4.5

    def test_fitted_nll_never_worse_than_identity(self):
        for seed in range(5):
            logits, y = _noisy_logits(seed=seed)
            model = cal.fit_calibration("temperature", logits, y)
            fitted = cal.nll_of_probs(cal.apply_calibration(model, logits), y)
            ident = cal.nll_of_probs(numerics.softmax(logits), y)
            assert fitted <= ident + 1e-12

    def test_already_calibrated_logits_keep_t_near_one(self):
        rng = np.random.default_rng(1)
        # well-separated, correct, moderate logits: T=1 is near-optimal and
        # the explicit identity comparison keeps the fit from wandering far
        logits, y = _noisy_logits(scale=1.0, seed=3)
        model = cal.fit_calibration("temperature", logits, y)
        fitted = cal.nll_of_probs(cal.apply_calibration(model, logits), y)
        ident = cal.nll_of_probs(numerics.softmax(logits), y)
        assert fitted <= ident + 1e-12

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(
            st.floats(min_value=-20, max_value=20, allow_nan=False),
            min_size=2,
            max_size=6,
        ),
        st.floats(min_value=0.05, max_value=20.0),
    )
    def test_scaling_preserves_argmax(self, row, temperature):
        logits = np.asarray([row])
        model = cal.CalibrationModel(kind="temperature", temperature=temperature)
        before = numerics.softmax(logits)
        after = cal.apply_calibration(model, logits)
        assert int(before.argmax()) == int(after.argmax())

    def test_unknown_kind_rejected(self):
        with pytest.raises(cal.CalibrationError):
            cal.fit_calibration("platt", np.zeros((2, 2)), np.array([0, 1]))


class TestVectorScaling:
    def test_improves_nll_under_per_class_miscalibration(self):
        rng = np.random.default_rng(2)
        logits, y = _noisy_logits(seed=2)
        # class 0 logits inflated: a scalar temperature cannot fix this fully
        logits[:, 0] += 2.0
        vec = cal.fit_calibration("vector", logits, y)
        temp = cal.fit_calibration("temperature", logits, y)
        nll_vec = cal.nll_of_probs(cal.apply_calibration(vec, logits), y)
        nll_temp = cal.nll_of_probs(cal.apply_calibration(temp, logits), y)
        assert nll_vec <= nll_temp + 1e-9
        assert vec.scale is not None and vec.shift is not None

    def test_identity_kind_passes_probabilities_through(self):
        logits = np.array([[2.0, 1.0, 0.0]])
        model = cal.CalibrationModel(kind="identity")
        np.testing.assert_allclose(
            cal.apply_calibration(model, logits), numerics.softmax(logits)
        )


class TestAbstention:
    def _preds(self, confs):
        out = []
        for i, c in enumerate(confs):
            k = 3
            rest = (1.0 - c) / (k - 1)
            probs = np.full(k, rest)
            probs[0] = c
            out.append(
                Prediction(sample_hash=f"h{i}", probs=probs, predicted=0, confidence=c)
            )
        return out

    def test_keep_iff_confidence_at_or_above_threshold(self):
        preds = self._preds([0.69, 0.70, 0.71])
        result = cal.abstain_filter(preds, tau=0.70)
        kept_hashes = {p.sample_hash for p in result.kept}
        # strictly-below abstains; exactly-at keeps
        assert kept_hashes == {"h1", "h2"}
        assert {p.sample_hash for p in result.abstained} == {"h0"}

    def test_decisions_record_threshold_and_choice(self):
        preds = self._preds([0.5, 0.9])
        result = cal.abstain_filter(preds, tau=0.7)
        assert [d.kept for d in result.decisions] == [False, True]
        assert all(d.threshold == 0.7 for d in result.decisions)

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.floats(min_value=0.34, max_value=1.0), min_size=1, max_size=40),
        st.floats(min_value=0.01, max_value=0.99),
    )
    def test_coverage_plus_abstention_is_exactly_one(self, confs, tau):
        result = cal.abstain_filter(self._preds(confs), tau)
        assert result.coverage + result.abstention_rate == 1.0
        assert len(result.kept) + len(result.abstained) == len(confs)

    def test_threshold_sweep_coverage_is_monotone(self):
        rng = np.random.default_rng(3)
        confs = 0.34 + 0.66 * rng.random(50)
        preds = self._preds(confs)
        correct = list(rng.random(50) < confs)
        taus = [0.05, 0.25, 0.5, 0.75, 0.9, 0.99]
        rows = cal.threshold_sweep(preds, correct, taus)
        assert [r["tau"] for r in rows] == taus
        coverages = [r["coverage"] for r in rows]
        assert all(a >= b for a, b in zip(coverages, coverages[1:]))
        for r in rows:
            assert r["coverage"] + r["abstention_rate"] == pytest.approx(1.0)

    def test_empty_input_rejected(self):
        with pytest.raises(cal.CalibrationError):
            cal.abstain_filter([], 0.5)

    def test_threshold_outside_open_interval_rejected(self):
        preds = self._preds([0.5])
        for tau in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(cal.CalibrationError):
                cal.abstain_filter(preds, tau)


class TestSerialization:
    def test_temperature_round_trip(self, tmp_path):
        model = cal.CalibrationModel(kind="temperature", temperature=2.5)
        path = str(tmp_path / "cal.json")
        cal.save_calibration(model, path)
        loaded = cal.load_calibration(path)
        assert loaded.kind == "temperature"
        assert loaded.temperature == pytest.approx(2.5)

    def test_vector_round_trip(self, tmp_path):
        model = cal.CalibrationModel(
            kind="vector",
            scale=np.array([1.0, 0.5, 2.0]),
            shift=np.array([0.1, -0.2, 0.0]),
        )
        path = str(tmp_path / "vec.json")
        cal.save_calibration(model, path)
        loaded = cal.load_calibration(path)
        np.testing.assert_allclose(loaded.scale, model.scale)
        np.testing.assert_allclose(loaded.shift, model.shift)
