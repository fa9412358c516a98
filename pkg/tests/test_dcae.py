"""Contrastive autoencoder: architecture rules, losses, gradients, training."""
from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmra import dcae, numerics
from conftest import fd_array_grad, max_rel_error, supcon_brute_force


class TestArchitecture:
    def test_preset_for_wide_binary_features(self):
        model = dcae.new_dcae("static", 1901)
        assert numerics.stack_dims(model.encoder) == [1901, 1024, 512, 256, 128]
        assert numerics.stack_dims(model.decoder) == [128, 256, 512, 1024, 1901]
        assert model.latent_dim == 128

    def test_preset_for_narrow_behavior_features(self):
        for dim in (77, 87):
            model = dcae.new_dcae("dynamic", dim)
            assert numerics.stack_dims(model.encoder) == [dim, 64, 48, 32]
            assert model.latent_dim == 32

    def test_default_latent_for_other_widths(self):
        # latent = max(4, min(32, d // 2)) with one geometric-mean hidden rung
        assert dcae.default_encoder_dims(20, None) == [20, 14, 10]
        # the floor: latent never drops below 4 even for tiny widths
        assert dcae.default_encoder_dims(6, None) == [6, 5, 4]
        model = dcae.new_dcae("network", 20)
        assert model.latent_dim == 10

    def test_decoder_mirrors_encoder(self):
        model = dcae.new_dcae("network", 24)
        enc = numerics.stack_dims(model.encoder)
        dec = numerics.stack_dims(model.decoder)
        assert dec == enc[::-1]

    def test_hidden_relu_latent_linear(self):
        model = dcae.new_dcae("network", 24)
        assert all(l.activation == "relu" for l in model.encoder[:-1])
        assert model.encoder[-1].activation == "linear"
        assert model.decoder[-1].activation == "linear"

    def test_explicit_hidden_dims_override(self):
        model = dcae.new_dcae("static", 30, latent_dim=5, hidden_dims=(16, 8))
        assert numerics.stack_dims(model.encoder) == [30, 16, 8, 5]


class TestReconstructionLoss:
    def test_mean_row_sum_of_squared_error(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])
        x_hat = np.array([[1.0, 0.0], [0.0, 4.0]])
        # rows contribute 4 and 9; mean is 6.5
        assert dcae.reconstruction_loss(x, x_hat) == pytest.approx(6.5)

    def test_perfect_reconstruction_is_zero(self):
        x = np.random.default_rng(0).normal(size=(4, 3))
        assert dcae.reconstruction_loss(x, x) == 0.0


class TestSupconLoss:
    def test_matches_brute_force_enumeration(self):
        rng = np.random.default_rng(1)
        for n in range(2, 9):
            for _ in range(6):
                z = rng.normal(size=(n, 4))
                labels = list(rng.integers(0, 3, size=n))
                if all(labels.count(l) < 2 for l in labels):
                    continue
                ours = dcae.supcon_loss(z, labels, 0.5)
                oracle = supcon_brute_force(z, labels, 0.5)
                assert ours == pytest.approx(oracle, abs=1e-10)

    def test_no_positive_anchors_warn_and_return_zero(self):
        z = np.random.default_rng(2).normal(size=(3, 4))
        with pytest.warns(RuntimeWarning, match="no anchor has a positive"):
            loss, grad = dcae.supcon_loss_and_grad(z, ["a", "b", "c"], 0.5)
        assert loss == 0.0
        np.testing.assert_array_equal(grad, np.zeros_like(z))

    def test_anchors_without_positives_are_skipped_not_counted(self):
        rng = np.random.default_rng(3)
        z = rng.normal(size=(5, 4))
        labels = ["a", "a", "b", "b", "c"]
        ours = dcae.supcon_loss(z, labels, 0.5)
        oracle = supcon_brute_force(z, labels, 0.5)
        assert ours == pytest.approx(oracle, abs=1e-10)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        z = rng.normal(size=(6, 4))
        labels = ["a", "a", "b", "b", "a", "b"]
        _, grad = dcae.supcon_loss_and_grad(z, labels, 0.5)
        fd = fd_array_grad(z, lambda v: dcae.supcon_loss(v, labels, 0.5))
        assert max_rel_error(grad, fd) < 1e-6

    def test_zero_norm_latent_is_perturbed_with_warning(self):
        z = np.zeros((2, 3))
        z[1] = [1.0, 0.0, 0.0]
        with pytest.warns(RuntimeWarning):
            loss = dcae.supcon_loss(np.vstack([z, z]), ["a", "b", "a", "b"], 0.5)
        assert np.isfinite(loss)

    def test_non_positive_temperature_rejected(self):
        z = np.ones((2, 2))
        with pytest.raises(ValueError):
            dcae.supcon_loss(z, ["a", "a"], 0.0)

    def test_scale_invariance_of_normalized_similarity(self):
        rng = np.random.default_rng(5)
        z = rng.normal(size=(5, 4))
        labels = ["a", "a", "b", "b", "b"]
        base = dcae.supcon_loss(z, labels, 0.5)
        scaled = dcae.supcon_loss(3.7 * z, labels, 0.5)
        assert scaled == pytest.approx(base, abs=1e-10)


class TestTotalLoss:
    def test_weighted_sum_of_parts(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(4, 5))
        x_hat = rng.normal(size=(4, 5))
        z = rng.normal(size=(4, 3))
        labels = ["a", "a", "b", "b"]
        lam = 0.7
        expected = dcae.reconstruction_loss(x, x_hat) + lam * dcae.supcon_loss(
            z, labels, 0.5
        )
        assert dcae.total_loss(x, x_hat, z, labels, lam, 0.5) == pytest.approx(
            expected
        )


class TestTraining:
    def _toy_batch(self, n_per=12, dim=8, seed=0):
        rng = np.random.default_rng(seed)
        c0 = rng.normal(size=dim) * 2
        c1 = -c0
        X = np.vstack(
            [c0 + 0.3 * rng.normal(size=(n_per, dim)), c1 + 0.3 * rng.normal(size=(n_per, dim))]
        )
        labels = ["a"] * n_per + ["b"] * n_per
        return X, labels

    def test_loss_decreases_and_latents_cluster(self):
        X, labels = self._toy_batch()
        model = dcae.new_dcae("static", X.shape[1], latent_dim=4, hidden_dims=(6,))
        cfg = dcae.DcaeTrainConfig(epochs=40, batch_size=8, lr=0.01, seed=0)
        trained, history = dcae.train_dcae(model, X, labels, cfg)
        assert history[-1] < history[0]
        z = dcae.encode(trained, X)
        zh = z / np.linalg.norm(z, axis=1, keepdims=True)
        intra = float((zh[:12] @ zh[:12].T).mean())
        inter = float((zh[:12] @ zh[12:].T).mean())
        assert intra > inter

    def test_training_is_seed_deterministic(self):
        X, labels = self._toy_batch()
        cfg = dcae.DcaeTrainConfig(epochs=5, batch_size=8, lr=0.01, seed=3)
        m1, h1 = dcae.train_dcae(
            dcae.new_dcae("static", X.shape[1], latent_dim=4, hidden_dims=(6,), seed=1),
            X,
            labels,
            cfg,
        )
        m2, h2 = dcae.train_dcae(
            dcae.new_dcae("static", X.shape[1], latent_dim=4, hidden_dims=(6,), seed=1),
            X,
            labels,
            cfg,
        )
        assert h1 == h2
        np.testing.assert_array_equal(m1.encoder[0].W, m2.encoder[0].W)

    def test_gradient_clipping_bounds_the_update(self):
        X, labels = self._toy_batch()
        X *= 50.0  # inflate gradients so the cap engages
        base = dcae.new_dcae("static", X.shape[1], latent_dim=4, hidden_dims=(6,), seed=1)
        capped_cfg = dcae.DcaeTrainConfig(
            epochs=1, batch_size=24, lr=0.001, seed=0, max_grad_norm=1.0
        )
        uncapped_cfg = dcae.DcaeTrainConfig(
            epochs=1, batch_size=24, lr=0.001, seed=0, max_grad_norm=None
        )
        capped, _ = dcae.train_dcae(base, X, labels, capped_cfg)
        uncapped, _ = dcae.train_dcae(base, X, labels, uncapped_cfg)
        d_capped = float(np.abs(capped.encoder[0].W - base.encoder[0].W).max())
        d_uncapped = float(np.abs(uncapped.encoder[0].W - base.encoder[0].W).max())
        assert d_capped < d_uncapped

    def test_audit_collects_training_hashes(self):
        X, labels = self._toy_batch()
        hashes = [f"h{i}" for i in range(len(labels))]
        audit: set[str] = set()
        model = dcae.new_dcae("static", X.shape[1], latent_dim=4, hidden_dims=(6,))
        cfg = dcae.DcaeTrainConfig(epochs=1, batch_size=8, lr=0.01, seed=0)
        dcae.train_dcae(model, X, labels, cfg, sample_hashes=hashes, audit=audit)
        assert audit == set(hashes)


class TestEmbedding:
    def test_embed_dataset_shapes_and_metadata(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(5, 8))
        model = dcae.new_dcae("dynamic", 8, latent_dim=3, hidden_dims=(6,))
        hashes = [f"h{i}" for i in range(5)]
        fams = ["a", "b", "a", "b", "a"]
        embs = dcae.embed_dataset(model, hashes, fams, X)
        assert [e.sample_hash for e in embs] == hashes
        assert all(e.modality == "dynamic" for e in embs)
        assert all(e.z.shape == (3,) for e in embs)
        np.testing.assert_allclose(
            np.stack([e.z for e in embs]), dcae.encode(model, X)
        )

    def test_reconstruct_round_trip_shape(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(4, 10))
        model = dcae.new_dcae("network", 10, latent_dim=4, hidden_dims=(7,))
        out = dcae.reconstruct(model, X)
        assert out.shape == X.shape


class TestSerialization:
    def test_save_load_round_trip(self, tmp_path):
        model = dcae.new_dcae("static", 12, latent_dim=4, hidden_dims=(8,), lam=0.9)
        path = str(tmp_path / "dcae.npz")
        dcae.save_dcae(model, path)
        loaded = dcae.load_dcae(path)
        assert loaded.modality == "static"
        assert loaded.latent_dim == 4
        assert loaded.lam == pytest.approx(0.9)
        for a, b in zip(model.encoder, loaded.encoder):
            np.testing.assert_array_equal(a.W, b.W)
        x = np.random.default_rng(9).normal(size=(3, 12))
        np.testing.assert_array_equal(
            dcae.encode(model, x), dcae.encode(loaded, x)
        )
