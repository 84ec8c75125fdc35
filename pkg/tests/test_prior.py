"""Prior guidance: exact closed forms on the linear mock provider, the
reference-image path, and the out-of-process provider against the echo server."""

import sys

import numpy as np
import pytest

from asgsr.errors import ProtocolError, ProviderError
from asgsr.prior import (
    ExternalProvider,
    Latent,
    LinearMockProvider,
    NullProvider,
    PriorConfig,
    lds_gradient,
    make_reference,
    reference_noise,
)
from asgsr.losses import resample

ECHO = f"{sys.executable} -m asgsr.prior.echo_server"


def images(seed, hw=(12, 12)):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 1, (*hw, 3)), rng.uniform(0, 1, (*hw, 3))


class TestPriorConfig:
    def test_defaults_valid(self):
        cfg = PriorConfig()
        assert cfg.start_timestep == 250 and cfg.lr_timestep == 200

    def test_ordering_enforced(self):
        with pytest.raises(ValueError):
            PriorConfig(start_timestep=100, lr_timestep=150)
        with pytest.raises(ValueError):
            PriorConfig(lr_timestep=0)

    def test_fixed_timestep_range_is_inclusive(self):
        assert PriorConfig(fixed_render_timestep=200).fixed_render_timestep == 200
        assert PriorConfig(fixed_render_timestep=0).fixed_render_timestep == 0
        with pytest.raises(ValueError):
            PriorConfig(fixed_render_timestep=201)

    def test_unknown_weighting_rejected(self):
        with pytest.raises(ValueError):
            PriorConfig(weighting="cosine")

    def test_sampled_timesteps_stay_below_lr(self):
        cfg = PriorConfig(lr_timestep=7)
        rng = np.random.default_rng(0)
        draws = {cfg.sample_render_timestep(rng) for _ in range(300)}
        assert draws <= set(range(7))
        assert len(draws) == 7

    def test_sigma_ratio_weighting(self):
        cfg = PriorConfig(weighting="sigma_ratio", weight_scale=2.0)
        assert cfg.weight(100) == pytest.approx(2.0 * 100 / 200)
        assert cfg.weight(0) == 0.0


class TestLdsClosedForm:
    def test_identity_provider_exact_form(self):
        # identity embedding, zero latent matrix: the gradient collapses to
        # weight * alpha(start) * (render - observation), whatever the noise
        provider = LinearMockProvider(working_hw=None)
        cfg = PriorConfig(weight_scale=1.3)
        alpha_m = 1.0 - cfg.start_timestep / provider.schedule_length()
        for seed in range(100):
            sr, lr = images(seed)
            got = lds_gradient(provider, sr, lr, cfg, np.random.default_rng(seed))
            want = cfg.weight_scale * alpha_m * (sr - lr)
            assert np.abs(got - want).max() <= 1e-10, seed

    def test_latent_matrix_exact_form(self):
        # nonzero latent matrix: replay the two branches by hand
        hw = (4, 4)
        n = 3 * hw[0] * hw[1]
        rng0 = np.random.default_rng(99)
        a_mat = 0.1 * rng0.standard_normal((n, n))
        provider = LinearMockProvider(working_hw=hw, latent_matrix=a_mat)
        cfg = PriorConfig(start_timestep=300, lr_timestep=250, weighting="sigma_ratio", weight_scale=0.7)
        length = provider.schedule_length()
        alpha = lambda t: 1.0 - t / length
        sigma = lambda t: t / length

        for seed in range(20):
            sr, lr = images(seed, hw=hw)
            rng = np.random.default_rng(seed)
            got = lds_gradient(provider, sr, lr, cfg, rng)

            replay = np.random.default_rng(seed)
            t_r = int(replay.integers(0, cfg.lr_timestep))
            noise = replay.standard_normal((3, *hw))

            def branch(image, t_to):
                e = np.moveaxis(image, 2, 0).reshape(-1)
                x = alpha(cfg.start_timestep) * e + sigma(cfg.start_timestep) * noise.reshape(-1)
                eps = a_mat @ x + e
                x = x - (sigma(cfg.start_timestep) - sigma(t_to)) * eps
                return a_mat @ x + e

            diff = branch(sr, t_r) - branch(lr, cfg.lr_timestep)
            want = cfg.weight(t_r) * alpha(cfg.start_timestep) * np.moveaxis(diff.reshape(3, *hw), 0, 2)
            assert np.abs(got - want).max() <= 1e-10, seed

    def test_weight_scale_is_exactly_linear(self):
        provider = LinearMockProvider(working_hw=(8, 8))
        sr, lr = images(3)
        base = lds_gradient(provider, sr, lr, PriorConfig(weight_scale=1.0), np.random.default_rng(7))
        scaled = lds_gradient(provider, sr, lr, PriorConfig(weight_scale=3.5), np.random.default_rng(7))
        assert np.array_equal(scaled, 3.5 * base)

    def test_zero_discrepancy_when_branches_match(self):
        # same image and the render timestep pinned to the observation's:
        # the two branches are identical computations, so exact zero even
        # with a nonzero latent matrix
        provider = LinearMockProvider(working_hw=(8, 8), latent_matrix=np.eye(3 * 64) * 0.2)
        sr, _ = images(4)
        cfg = PriorConfig(fixed_render_timestep=200)
        grad = lds_gradient(provider, sr, sr.copy(), cfg, np.random.default_rng(0))
        assert not grad.any()

    def test_zero_discrepancy_without_latent_mixing(self):
        # default predictor depends only on the conditioning image, so equal
        # images cancel for any sampled timestep
        provider = LinearMockProvider(working_hw=(8, 8))
        sr, _ = images(4)
        grad = lds_gradient(provider, sr, sr.copy(), PriorConfig(), np.random.default_rng(0))
        assert not grad.any()

    def test_zero_weight_gives_zero(self):
        provider = LinearMockProvider(working_hw=(8, 8))
        sr, lr = images(5)
        grad = lds_gradient(provider, sr, lr, PriorConfig(weight_scale=0.0), np.random.default_rng(0))
        assert not grad.any()

    def test_fixed_timestep_ignores_the_draw(self):
        provider = LinearMockProvider(working_hw=None)
        cfg = PriorConfig(fixed_render_timestep=50)
        sr, lr = images(6)
        a = lds_gradient(provider, sr, lr, cfg, np.random.default_rng(1))
        b = lds_gradient(provider, sr, lr, cfg, np.random.default_rng(2))
        assert np.array_equal(a, b)

    def test_gradient_pulls_render_toward_observation(self):
        # one descent step along -grad must reduce the embedded difference
        provider = LinearMockProvider(working_hw=None)
        sr, lr = images(8)
        grad = lds_gradient(provider, sr, lr, PriorConfig(), np.random.default_rng(0))
        stepped = sr - 0.5 * grad
        assert np.mean((stepped - lr) ** 2) < np.mean((sr - lr) ** 2)

    def test_start_beyond_schedule_rejected(self):
        provider = LinearMockProvider(working_hw=None, schedule_len=100)
        sr, lr = images(9)
        with pytest.raises(ProviderError, match="schedule"):
            lds_gradient(provider, sr, lr, PriorConfig(start_timestep=250), np.random.default_rng(0))

    def test_branch_dims_must_agree(self):
        provider = LinearMockProvider(working_hw=None)  # latent dims track the image
        sr = np.zeros((8, 8, 3))
        lr = np.zeros((6, 6, 3))
        with pytest.raises(ProviderError, match="dims differ"):
            lds_gradient(provider, sr, lr, PriorConfig(), np.random.default_rng(0))

    def test_non_finite_image_rejected(self):
        provider = LinearMockProvider(working_hw=None)
        sr, lr = images(10)
        sr[0, 0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            lds_gradient(provider, sr, lr, PriorConfig(), np.random.default_rng(0))


class TestMockProvider:
    def test_denoise_to_same_timestep_is_identity(self):
        provider = LinearMockProvider(working_hw=(8, 8), latent_matrix=np.full((192, 192), 0.01))
        latent = Latent(np.random.default_rng(0).standard_normal((3, 8, 8)), 40)
        out = provider.denoise(latent, 40, 40, np.zeros((8, 8, 3)))
        assert np.array_equal(out.data, latent.data)
        assert out.timestep == 40

    def test_denoise_timestep_mismatch_rejected(self):
        provider = LinearMockProvider(working_hw=(8, 8))
        latent = Latent(np.zeros((3, 8, 8)), 40)
        with pytest.raises(ValueError, match="timestep"):
            provider.denoise(latent, 50, 10, np.zeros((8, 8, 3)))

    def test_make_reference_is_bicubic_upsample(self):
        # mock decode returns the conditioning image resampled to out_hw
        provider = LinearMockProvider(working_hw=(8, 8))
        lr = np.random.default_rng(11).uniform(0, 1, (8, 8, 3))
        noise = reference_noise(0, 1, 2, provider.latent_dims((8, 8)))
        ref = make_reference(provider, lr, PriorConfig(), (16, 16), noise)
        assert np.array_equal(ref, resample(lr, (16, 16)))

    def test_encode_checks_noise_shape(self):
        provider = LinearMockProvider(working_hw=(8, 8))
        with pytest.raises(ValueError, match="noise shape"):
            provider.encode(np.zeros((8, 8, 3)), np.zeros((3, 4, 4)), 10)

    def test_latent_validation(self):
        with pytest.raises(ValueError):
            Latent(np.zeros((3, 4)), 0)
        with pytest.raises(ValueError):
            Latent(np.full((3, 2, 2), np.inf), 0)
        with pytest.raises(ValueError):
            Latent(np.zeros((3, 2, 2)), -1)


class TestReferenceNoise:
    def test_deterministic_per_key(self):
        a = reference_noise(7, 2, 3, (4, 8, 8))
        b = reference_noise(7, 2, 3, (4, 8, 8))
        assert np.array_equal(a, b)

    def test_distinct_across_views_and_stages(self):
        base = reference_noise(7, 2, 3, (4, 8, 8))
        assert not np.array_equal(base, reference_noise(7, 2, 4, (4, 8, 8)))
        assert not np.array_equal(base, reference_noise(7, 3, 3, (4, 8, 8)))
        assert not np.array_equal(base, reference_noise(8, 2, 3, (4, 8, 8)))


class TestNullProvider:
    def test_every_operation_refuses(self):
        provider = NullProvider()
        with pytest.raises(ProviderError):
            provider.latent_dims((8, 8))
        with pytest.raises(ProviderError):
            provider.schedule_length()


class TestEchoServer:
    """The bundled echo process, driven through the real child-process provider."""

    @pytest.fixture()
    def provider(self):
        with ExternalProvider(ECHO) as p:
            yield p

    def test_dims_and_schedule(self, provider):
        assert provider.latent_dims((64, 64)) == (4, 8, 8)
        assert provider.latent_dims((64, 48)) == (4, 8, 6)
        assert provider.schedule_length() == 1000

    def test_encode_echoes_the_noise(self, provider):
        image = np.random.default_rng(0).uniform(0, 1, (16, 16, 3))
        dims = provider.latent_dims((16, 16))
        noise = np.random.default_rng(1).standard_normal(dims).astype(np.float32).astype(np.float64)
        latent = provider.encode(image, noise, 120)
        assert latent.timestep == 120
        assert np.array_equal(latent.data, noise)

    def test_predict_and_denoise_echo_the_latent(self, provider):
        data = np.random.default_rng(2).standard_normal((4, 2, 2)).astype(np.float32).astype(np.float64)
        latent = Latent(data, 90)
        cond = np.zeros((16, 16, 3))
        assert np.array_equal(provider.predict_noise(latent, cond, 90), data)
        jumped = provider.denoise(latent, 90, 30, cond)
        assert jumped.timestep == 30
        assert np.array_equal(jumped.data, data)
        same = provider.denoise(latent, 90, 90, cond)
        assert np.array_equal(same.data, data)

    def test_decode_and_grad_shapes(self, provider):
        latent = Latent(np.zeros((4, 2, 2)), 0)
        image = provider.decode(latent, (12, 10), np.zeros((16, 16, 3)))
        assert image.shape == (12, 10, 3)
        grad = provider.encode_vjp(np.zeros((16, 16, 3)), np.zeros((4, 2, 2)), 50)
        assert grad.shape == (16, 16, 3)
        assert not grad.any()

    def test_lds_gradient_runs_end_to_end(self, provider):
        # echo predictions are the latent itself, so both branches see the
        # same noise and the gradient is exactly zero
        sr, lr = images(12, hw=(16, 16))
        grad = lds_gradient(provider, sr, lr, PriorConfig(), np.random.default_rng(0))
        assert grad.shape == sr.shape
        assert not grad.any()

    def test_fixed_latent_size_flag(self):
        with ExternalProvider(ECHO + " --latent-size 4x4") as p:
            assert p.latent_dims((16, 16)) == (4, 4, 4)
            assert p.latent_dims((48, 32)) == (4, 4, 4)

    def test_noise_shape_checked_before_sending(self, provider):
        with pytest.raises(ProviderError, match="noise shape"):
            provider.encode(np.zeros((16, 16, 3)), np.zeros((4, 3, 3)), 10)

    def test_close_terminates_child(self):
        provider = ExternalProvider(ECHO)
        provider.latent_dims((8, 8))
        child = provider._proc
        provider.close()
        assert child.poll() is not None


class TestExternalFailures:
    def test_missing_binary(self):
        with pytest.raises(ProviderError, match="launch"):
            ExternalProvider("/nonexistent-provider-binary")

    def test_child_exit_reported_with_code(self):
        provider = ExternalProvider(f"{sys.executable} -c 'import sys; sys.exit(3)'", timeout=10.0)
        try:
            with pytest.raises(ProviderError, match="exit code 3"):
                provider.latent_dims((8, 8))
        finally:
            provider.close()

    def test_garbage_response_is_a_protocol_error(self):
        script = "import sys; sys.stdout.buffer.write(b'X' * 64); sys.stdout.buffer.flush(); sys.stdin.read()"
        provider = ExternalProvider([sys.executable, "-c", script], timeout=10.0)
        try:
            with pytest.raises(ProtocolError, match="magic"):
                provider.latent_dims((8, 8))
        finally:
            provider.close()

    def test_empty_command_rejected(self):
        with pytest.raises(ProviderError, match="command"):
            ExternalProvider("")
