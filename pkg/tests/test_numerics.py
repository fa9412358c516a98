"""Dense-stack forward/backward, SGD, softmax, serialization, checksums."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmra import numerics
from conftest import fd_stack_grads, max_rel_error, random_stack


def _sum_loss(layers, x):
    out, _ = numerics.forward_stack(layers, x)
    return float((out**2).sum())


class TestForwardBackward:
    def test_forward_shapes_and_hidden_relu(self):
        rng = np.random.default_rng(0)
        layers = random_stack(rng, (4, 3, 2))
        x = rng.normal(size=(7, 4))
        out, cache = numerics.forward_stack(layers, x)
        assert out.shape == (7, 2)
        # hidden activations are rectified, final layer is affine (can go
        # negative)
        assert (cache.inputs[1] >= 0).all()
        np.testing.assert_allclose(cache.inputs[1], np.maximum(cache.preacts[0], 0.0))
        assert layers[0].activation == "relu"
        assert layers[-1].activation == "linear"

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        layers = random_stack(rng, (3, 4, 2))
        x = rng.normal(size=(5, 3))
        out, cache = numerics.forward_stack(layers, x)
        grads, dx = numerics.backward_stack(layers, cache, 2.0 * out)
        fd = fd_stack_grads(layers, lambda ls: _sum_loss(ls, x))
        for g, (fW, fb) in zip(grads, fd):
            assert max_rel_error(g.dW, fW) < 1e-6
            assert max_rel_error(g.db, fb) < 1e-6
        fx = np.zeros_like(x)
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                h = 1e-5
                orig = x[i, j]
                x[i, j] = orig + h
                up = _sum_loss(layers, x)
                x[i, j] = orig - h
                down = _sum_loss(layers, x)
                x[i, j] = orig
                fx[i, j] = (up - down) / (2 * h)
        assert max_rel_error(dx, fx) < 1e-6

    def test_grad_check_passes_on_correct_gradient(self):
        rng = np.random.default_rng(2)
        layers = random_stack(rng, (3, 3, 2))
        x = rng.normal(size=(4, 3))

        def loss_fn(ls, xs):
            out, cache = numerics.forward_stack(ls, xs)
            grads, _ = numerics.backward_stack(ls, cache, 2.0 * out)
            return float((out**2).sum()), grads

        report = numerics.grad_check(layers, loss_fn, x)
        assert report.max_rel_error <= report.tolerance
        assert report.n_checked > 0

    def test_grad_check_flags_a_wrong_gradient(self):
        rng = np.random.default_rng(3)
        layers = random_stack(rng, (3, 3, 2))
        x = rng.normal(size=(4, 3))

        def broken(ls, xs):
            out, cache = numerics.forward_stack(ls, xs)
            # upstream gradient off by 2x: the check must notice
            grads, _ = numerics.backward_stack(ls, cache, 4.0 * out)
            return float((out**2).sum()), grads

        report = numerics.grad_check(layers, broken, x)
        assert report.max_rel_error > report.tolerance


class TestSgd:
    def test_step_is_functional_and_correct(self):
        rng = np.random.default_rng(4)
        layers = random_stack(rng, (2, 2))
        w_before = layers[0].W.copy()
        grads = [numerics.LayerGrads(dW=np.ones_like(layers[0].W), db=np.ones_like(layers[0].b))]
        new = numerics.sgd_step(layers, grads, lr=0.1)
        np.testing.assert_allclose(layers[0].W, w_before)
        np.testing.assert_allclose(new[0].W, w_before - 0.1)

    def test_weight_decay_shrinks_weights_not_bias(self):
        rng = np.random.default_rng(5)
        layers = random_stack(rng, (2, 2))
        zero = [numerics.LayerGrads(dW=np.zeros_like(layers[0].W), db=np.zeros_like(layers[0].b))]
        new = numerics.sgd_step(layers, zero, lr=1.0, weight_decay=0.01)
        np.testing.assert_allclose(new[0].W, layers[0].W * (1 - 0.01))
        np.testing.assert_allclose(new[0].b, layers[0].b)

    def test_non_finite_gradient_raises(self):
        rng = np.random.default_rng(6)
        layers = random_stack(rng, (2, 2))
        bad = [numerics.LayerGrads(dW=np.full_like(layers[0].W, np.nan), db=np.zeros_like(layers[0].b))]
        with pytest.raises(numerics.NonFiniteGradientError):
            numerics.sgd_step(layers, bad, lr=0.1)


class TestSoftmax:
    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(
            st.floats(min_value=-50, max_value=50, allow_nan=False),
            min_size=2,
            max_size=8,
        ),
        st.floats(min_value=-100, max_value=100, allow_nan=False),
    )
    def test_rows_sum_to_one_and_shift_invariant(self, logits, shift):
        row = np.asarray([logits])
        p = numerics.softmax(row)
        assert abs(float(p.sum()) - 1.0) < 1e-12
        assert (p >= 0).all()
        q = numerics.softmax(row + shift)
        np.testing.assert_allclose(p, q, atol=1e-12)

    def test_extreme_logits_stay_finite(self):
        p = numerics.softmax(np.array([[1000.0, 0.0, -1000.0]]))
        assert np.isfinite(p).all()
        assert abs(float(p.sum()) - 1.0) < 1e-12

    def test_matches_naive_on_moderate_values(self):
        rng = np.random.default_rng(7)
        logits = rng.normal(size=(6, 5))
        naive = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        np.testing.assert_allclose(numerics.softmax(logits), naive, atol=1e-12)


class TestSerialization:
    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        stacks = {
            "encoder": random_stack(rng, (4, 3, 2)),
            "decoder": random_stack(rng, (2, 3, 4)),
        }
        path = str(tmp_path / "model.npz")
        numerics.save_layers(path, stacks, meta={"note": "round-trip"})
        loaded, meta = numerics.load_layers(path)
        assert meta["note"] == "round-trip"
        assert set(loaded) == {"encoder", "decoder"}
        for name in stacks:
            for a, b in zip(stacks[name], loaded[name]):
                np.testing.assert_array_equal(a.W, b.W)
                np.testing.assert_array_equal(a.b, b.b)
                assert a.activation == b.activation

    def test_checksum_stable_and_sensitive(self):
        rng = np.random.default_rng(9)
        stack = random_stack(rng, (3, 2))
        c1 = numerics.params_checksum([stack])
        c2 = numerics.params_checksum([stack])
        assert c1 == c2
        stack[0].W[0, 0] += 1e-9
        assert numerics.params_checksum([stack]) != c1


class TestWeightedCrossEntropy:
    def test_weight_scales_the_loss(self):
        probs = np.array([0.2, 0.5, 0.3])
        w = np.array([1.0, 3.0, 1.0])
        unweighted = numerics.weighted_cross_entropy(probs, 1, np.ones(3))
        weighted = numerics.weighted_cross_entropy(probs, 1, w)
        assert weighted == pytest.approx(3.0 * unweighted)
        assert unweighted == pytest.approx(-np.log(0.5))
