"""Encoder/decoder, reparameterization, and the decomposed KL objective."""

import numpy as np
import pytest

from dtigrid.diffcore import grad_check
from dtigrid.errors import InvalidInputError, NumericError, ShapeError
from dtigrid.vae import (
    LATENT_DIM,
    Decoder,
    Encoder,
    TcvaeLossBreakdown,
    TcvaeModel,
    kl_decomposed,
    kl_decomposed_backward,
    latent_traversal,
    recon_loss,
    reparameterize,
    tcvae_backward,
    tcvae_loss,
    validate_fa_image,
)


class TestValidateFaImage:
    def test_accepts_valid(self):
        validate_fa_image(np.full((9, 9), 0.5))

    def test_rejects_wrong_shape(self):
        with pytest.raises(ShapeError):
            validate_fa_image(np.zeros((8, 9)))

    def test_rejects_out_of_range(self):
        img = np.zeros((9, 9))
        img[0, 0] = 1.2
        with pytest.raises(InvalidInputError):
            validate_fa_image(img)

    def test_rejects_nan(self):
        img = np.zeros((9, 9))
        img[3, 3] = np.nan
        with pytest.raises(InvalidInputError):
            validate_fa_image(img)


class TestEncoder:
    def test_zero_image_zero_heads(self):
        enc = Encoder(np.random.default_rng(0))
        enc.mu_head.w[...] = 0.0
        enc.mu_head.b[...] = 0.0
        enc.lv_head.w[...] = 0.0
        enc.lv_head.b[...] = 0.0
        mu, lv, _ = enc.encode(np.zeros((9, 9)))
        np.testing.assert_array_equal(mu, np.zeros((1, LATENT_DIM)))
        np.testing.assert_array_equal(lv, np.zeros((1, LATENT_DIM)))

    def test_identical_images_identical_codes(self):
        enc = Encoder(np.random.default_rng(1))
        x = np.random.default_rng(2).uniform(0, 1, size=(9, 9))
        mu1, lv1, _ = enc.encode(np.stack([x, x]))
        np.testing.assert_array_equal(mu1[0], mu1[1])
        np.testing.assert_array_equal(lv1[0], lv1[1])

    def test_single_pixel_difference_changes_mu(self):
        enc = Encoder(np.random.default_rng(3))
        x1 = np.random.default_rng(4).uniform(0.2, 0.8, size=(9, 9))
        x2 = x1.copy()
        x2[4, 4] += 0.1
        mu, _, _ = enc.encode(np.stack([x1, x2]))
        assert np.any(mu[0] != mu[1])

    def test_logvar_clamped(self):
        enc = Encoder(np.random.default_rng(5))
        enc.lv_head.b[...] = 100.0
        _, lv, _ = enc.encode(np.zeros((9, 9)))
        assert np.all(lv == 8.0)

    def test_nonfinite_input_raises(self):
        enc = Encoder(np.random.default_rng(0))
        x = np.zeros((9, 9))
        x[0, 0] = np.inf
        with pytest.raises(NumericError):
            enc.encode(x)


class TestReparameterize:
    def test_eps_zero(self):
        mu = np.arange(4.0)
        z = reparameterize(mu, np.ones(4), np.zeros(4))
        np.testing.assert_array_equal(z, mu)

    def test_unit_sigma(self):
        mu = np.arange(4.0)
        e = np.array([1.0, -1.0, 0.5, 2.0])
        z = reparameterize(mu, np.zeros(4), e)
        np.testing.assert_array_equal(z, mu + e)

    def test_sigma_two(self):
        mu = np.arange(4.0)
        z = reparameterize(mu, np.full(4, 2 * np.log(2.0)), np.ones(4))
        np.testing.assert_allclose(z, mu + 2.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            reparameterize(np.zeros(4), np.zeros(3), np.zeros(4))


class TestDecoder:
    def test_output_range_fuzz(self):
        dec = Decoder(np.random.default_rng(0))
        z = np.random.default_rng(1).normal(0, 3, size=(1000, LATENT_DIM))
        y, _ = dec.decode(z)
        assert y.shape == (1000, 9, 9)
        assert y.min() >= 0.0 and y.max() <= 1.0

    def test_zero_kernels_constant_sigmoid_bias(self):
        dec = Decoder(np.random.default_rng(0))
        for conv in (dec.conv1, dec.conv2, dec.conv3):
            conv.w[...] = 0.0
            conv.b[...] = 0.0
        dec.conv3.b[...] = 0.7
        y, _ = dec.decode(np.random.default_rng(1).normal(size=(3, LATENT_DIM)))
        np.testing.assert_allclose(y, 1.0 / (1.0 + np.exp(-0.7)))

    def test_single_dim_difference_localizes(self):
        # the per-pixel difference between two z differing in one dim is the
        # traversal map of that dim
        dec = Decoder(np.random.default_rng(2))
        rng = np.random.default_rng(3)
        z0 = rng.normal(size=LATENT_DIM)
        z1 = z0.copy()
        z1[7] += 1.0
        y, _ = dec.decode(np.stack([z0, z1]))
        images, _ = latent_traversal_images(dec, z0, 7, [z0[7], z1[7]])
        np.testing.assert_allclose(y[1] - y[0], images[1] - images[0])

    def test_latent_dim_mismatch(self):
        dec = Decoder(np.random.default_rng(0))
        with pytest.raises(ShapeError):
            dec.decode(np.zeros((1, LATENT_DIM + 1)))


def latent_traversal_images(decoder, z_base, dim, values):
    zs = np.tile(np.asarray(z_base, dtype=np.float64), (len(values), 1))
    zs[:, dim] = values
    images, _ = decoder.decode(zs)
    return [images[i] for i in range(len(values))], images.var(axis=0)


class TestReconLoss:
    def test_identical(self):
        x = np.random.default_rng(0).uniform(size=(2, 9, 9))
        assert recon_loss(x, x) == 0.0

    def test_zeros_vs_ones(self):
        assert recon_loss(np.zeros((9, 9)), np.ones((9, 9))) == 1.0

    def test_single_pixel(self):
        x = np.zeros((9, 9))
        y = np.zeros((9, 9))
        y[2, 3] = 0.9
        assert abs(recon_loss(x, y) - 0.81 / 81) <= 1e-15


class TestKlDecomposed:
    def test_single_sample_single_dataset_mi_zero(self):
        rng = np.random.default_rng(0)
        mu = rng.normal(size=(1, 5))
        lv = rng.normal(size=(1, 5)) * 0.1
        z = reparameterize(mu, lv, rng.normal(size=(1, 5)))
        mi, _, _ = kl_decomposed(mu, lv, z, dataset_size=1)
        assert abs(mi) <= 1e-12

    def test_one_dim_tc_zero(self):
        rng = np.random.default_rng(1)
        mu = rng.normal(size=(6, 1))
        lv = rng.normal(size=(6, 1)) * 0.1
        z = reparameterize(mu, lv, rng.normal(size=(6, 1)))
        _, tc, _ = kl_decomposed(mu, lv, z, dataset_size=50)
        assert abs(tc) <= 1e-12

    def test_q_equals_p_all_zero(self):
        m, d = 4, 3
        mu = np.zeros((m, d))
        lv = np.zeros((m, d))
        z = np.zeros((m, d))
        mi, tc, dim_kl = kl_decomposed(mu, lv, z, dataset_size=m)
        assert abs(mi + tc + dim_kl) <= 1e-12

    def test_telescoping_identity(self):
        # mi + tc + dim_kl == mean_i[log q(z_i|x_i) - log p(z_i)] exactly
        rng = np.random.default_rng(2)
        for _ in range(20):
            m = int(rng.integers(2, 9))
            d = int(rng.integers(2, 8))
            mu = rng.normal(size=(m, d))
            lv = rng.normal(size=(m, d))
            z = reparameterize(mu, lv, rng.normal(size=(m, d)))
            mi, tc, dim_kl = kl_decomposed(mu, lv, z, dataset_size=100)
            log2pi = np.log(2 * np.pi)
            logqzx = np.sum(
                -0.5 * (log2pi + lv + (z - mu) ** 2 * np.exp(-lv)), axis=1
            )
            logpz = np.sum(-0.5 * (log2pi + z * z), axis=1)
            assert abs((mi + tc + dim_kl) - np.mean(logqzx - logpz)) <= 1e-10

    def test_backward_matches_fd(self):
        rng = np.random.default_rng(3)
        m, d = 4, 3
        mu = rng.normal(size=(m, d))
        lv = rng.normal(size=(m, d)) * 0.3
        z = rng.normal(size=(m, d))
        w = (0.7, 1.9, 1.3)
        *_, cache = kl_decomposed(mu, lv, z, 50, return_cache=True)
        dmu, dlv, dz = kl_decomposed_backward(cache, *w)

        def val(mu_, lv_, z_):
            mi, tc, dk = kl_decomposed(mu_, lv_, z_, 50)
            return w[0] * mi + w[1] * tc + w[2] * dk

        h = 1e-6
        for arr, grad in ((mu, dmu), (lv, dlv), (z, dz)):
            for idx in [(0, 0), (2, 1), (3, 2)]:
                args = {"mu_": mu, "lv_": lv, "z_": z}
                key = "mu_" if arr is mu else ("lv_" if arr is lv else "z_")
                ap = arr.copy()
                ap[idx] += h
                am = arr.copy()
                am[idx] -= h
                fd = (
                    val(**{**args, key: ap}) - val(**{**args, key: am})
                ) / (2 * h)
                assert abs(grad[idx] - fd) <= 1e-5 * max(1.0, abs(fd))

    def test_empty_batch_rejected(self):
        with pytest.raises((InvalidInputError, ShapeError)):
            kl_decomposed(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3)), 5)


class TestTcvaeLoss:
    def _setup(self, seed=0, batch=4):
        rng = np.random.default_rng(seed)
        model = TcvaeModel(seed=seed)
        x = rng.uniform(0.1, 0.9, size=(batch, 9, 9))
        eps = rng.standard_normal((batch, LATENT_DIM))
        return model, x, eps

    def test_breakdown_total_identity(self):
        bd = TcvaeLossBreakdown(recon=0.5, mi=0.1, tc=0.2, dim_kl=0.3, beta=5.0)
        assert bd.total == 0.5 + 0.1 + 5.0 * 0.2 + 0.3

    def test_beta_zero_removes_tc(self):
        model, x, eps = self._setup()
        bd0, _ = tcvae_loss(model, x, 0.0, eps, 100)
        assert bd0.total == bd0.recon + bd0.mi + bd0.dim_kl

    def test_beta_one_single_sample_kl(self):
        model, x, eps = self._setup()
        bd, ctx = tcvae_loss(model, x, 1.0, eps, 100)
        log2pi = np.log(2 * np.pi)
        logqzx = np.sum(
            -0.5 * (log2pi + ctx.lv + (ctx.z - ctx.mu) ** 2 * np.exp(-ctx.lv)),
            axis=1,
        )
        logpz = np.sum(-0.5 * (log2pi + ctx.z**2), axis=1)
        kl = float(np.mean(logqzx - logpz))
        assert abs(bd.total - (bd.recon + kl)) <= 1e-10

    def test_full_gradcheck(self):
        model, x, eps = self._setup(seed=1)
        items = model.param_items()

        def loss():
            model.zero_grad()
            bd, ctx = tcvae_loss(model, x, 5.0, eps, 100)
            tcvae_backward(model, ctx)
            return bd.total

        report = grad_check(
            loss, items, max_entries=6, rng=np.random.default_rng(0)
        )
        assert report.passed, report.summary()

    def test_negative_beta_rejected(self):
        model, x, eps = self._setup()
        with pytest.raises(InvalidInputError):
            tcvae_loss(model, x, -1.0, eps, 100)


class TestLatentTraversal:
    def test_base_value_reproduces_reconstruction(self):
        model = TcvaeModel(seed=0)
        z = np.random.default_rng(1).normal(size=LATENT_DIM)
        base, _ = model.decoder.decode(z[None])
        images, _ = latent_traversal(model, z, 3, [z[3]])
        np.testing.assert_array_equal(images[0], base[0])

    def test_constant_decoder_zero_variance(self):
        model = TcvaeModel(seed=0)
        for conv in (model.decoder.conv1, model.decoder.conv2,
                     model.decoder.conv3):
            conv.w[...] = 0.0
        _, variance = latent_traversal(model, np.zeros(LATENT_DIM), 0,
                                       [-2.0, 0.0, 2.0])
        np.testing.assert_array_equal(variance, np.zeros((9, 9)))

    def test_dim_out_of_range(self):
        model = TcvaeModel(seed=0)
        with pytest.raises(InvalidInputError):
            latent_traversal(model, np.zeros(LATENT_DIM), LATENT_DIM, [0.0])


class TestModelState:
    def test_state_round_trip_bit_identical(self, tmp_path):
        from dtigrid.diffcore import load_checkpoint, save_checkpoint

        model = TcvaeModel(seed=7)
        x = np.random.default_rng(0).uniform(size=(2, 9, 9))
        mu_ref, lv_ref, _ = model.encoder.encode(x)
        path = tmp_path / "m.bin"
        save_checkpoint(path, model.state_dict())
        other = TcvaeModel(seed=99)
        other.load_state(load_checkpoint(path))
        mu, lv, _ = other.encoder.encode(x)
        np.testing.assert_array_equal(mu, mu_ref)
        np.testing.assert_array_equal(lv, lv_ref)

    def test_load_state_shape_mismatch(self):
        model = TcvaeModel(seed=0)
        bad = {name: np.zeros(3) for name, _, _ in model.param_items()}
        with pytest.raises(ShapeError):
            model.load_state(bad)
