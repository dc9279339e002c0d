"""
Tests for the block denoiser, its losses and the discriminator.
"""

import math

import numpy as np
import pytest

from chunkvid import tensor as T
from chunkvid.denoiser import (
    DenoiserConfig,
    Discriminator,
    LatentChunk,
    block_forcing_loss,
    forward,
    init_params,
    interpolate,
    param_shapes,
    resample_frames,
    self_forcing_loss,
    semantic_reference,
    trainable,
    velocity_target,
    video_latents,
)
from chunkvid.errors import ConfigError, DimensionError, RangeError
from chunkvid.random_source import RandomSource
from chunkvid.tensor import Tensor

from oracles import numeric_grad, relative_error


def small_config(**overrides) -> DenoiserConfig:
    values = dict(d_model=8, n_heads=2, n_layers=1, head_dim=4, chunk_len=3,
                  latent_dim=4, embed_dim=5, gamma=0.5, sample_steps=2)
    values.update(overrides)
    return DenoiserConfig(**values).validate()


class TestFlowPath:
    """Test cases for the interpolation path and velocity target."""

    def test_endpoints(self):
        rng = np.random.default_rng(0)
        x, eps = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        assert np.array_equal(interpolate(x, eps, 0.0).data, x)
        assert np.array_equal(interpolate(x, eps, 1.0).data, eps)

    def test_scalar(self):
        assert interpolate(0.0, 2.0, 0.25).item() == 0.5

    def test_t_out_of_range(self):
        with pytest.raises(RangeError):
            interpolate([0.0], [1.0], 1.5)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            interpolate(np.zeros(2), np.zeros(3), 0.5)

    def test_velocity(self):
        assert np.array_equal(velocity_target([1.0, 2.0], [3.0, 3.0]).data, [2.0, 1.0])
        assert np.array_equal(velocity_target([1.0, 2.0], [1.0, 2.0]).data, [0.0, 0.0])
        assert np.array_equal(velocity_target([0.0, 0.0], [5.0, -1.0]).data, [5.0, -1.0])

    def test_path_identity(self):
        """x_t + (1 - t)·v = eps for random tensors and times."""
        rng = np.random.default_rng(1)
        for _ in range(100):
            x, eps, t = rng.normal(size=(4, 5)), rng.normal(size=(4, 5)), float(rng.uniform())
            x_t = interpolate(x, eps, t)
            recon = T.add(x_t, T.scale(velocity_target(x, eps), 1.0 - t))
            assert np.allclose(recon.data, eps, atol=1e-12, rtol=0)


class TestBlockForcingLoss:
    """Test cases for the block forcing loss."""

    def test_zero_gamma_perfect(self):
        eps = np.arange(6.0).reshape(2, 3)
        assert block_forcing_loss(eps, eps, np.ones((2, 3)), 0.0).item() == 0.0

    def test_zero_gamma_is_flow_matching(self):
        rng = np.random.default_rng(2)
        v, eps, cond = (rng.normal(size=(3, 4)) for _ in range(3))
        loss = block_forcing_loss(v, eps, cond, 0.0).item()
        assert abs(loss - np.mean((v - eps) ** 2)) <= 1e-12

    def test_hand_arithmetic(self):
        """v = 1, eps = 2, x_cond = 2, gamma = 0.5 gives 0."""
        assert block_forcing_loss([1.0], [2.0], [2.0], 0.5).item() == 0.0

    def test_permutation_invariant(self):
        rng = np.random.default_rng(3)
        v, eps, cond = (rng.normal(size=12) for _ in range(3))
        perm = rng.permutation(12)
        a = block_forcing_loss(v, eps, cond, 0.7).item()
        b = block_forcing_loss(v[perm], eps[perm], cond[perm], 0.7).item()
        assert abs(a - b) <= 1e-12


class TestSemanticReference:
    """Test cases for the semantic reference."""

    def test_identity_resample(self):
        chunk = np.arange(12.0).reshape(3, 4)
        assert np.array_equal(semantic_reference([chunk], 3, 4).data, chunk)

    def test_mean_of_equals(self):
        chunk = np.arange(12.0).reshape(3, 4)
        assert np.allclose(semantic_reference([chunk, chunk], 3, 4).data, chunk)

    def test_linear_resample(self):
        """Two frames to three: [f0, (f0 + f1)/2, f1]."""
        f0, f1 = np.array([0.0, 2.0]), np.array([4.0, 6.0])
        out = resample_frames(np.stack([f0, f1]), 3)
        assert np.allclose(out, [f0, (f0 + f1) / 2, f1])

    def test_empty(self):
        assert np.array_equal(semantic_reference([], 3, 4).data, np.zeros((3, 4)))

    def test_latent_chunks(self):
        chunk = LatentChunk(np.ones((2, 4)), np.ones(5), 0)
        assert np.allclose(semantic_reference([chunk], 4, 4).data, np.ones((4, 4)))


class TestDenoiserConfig:
    """Test cases for denoiser configuration."""

    def test_defaults(self):
        cfg = DenoiserConfig().validate()
        assert (cfg.d_model, cfg.n_heads, cfg.n_layers, cfg.chunk_len, cfg.latent_dim,
                cfg.embed_dim, cfg.sample_steps) == (64, 4, 2, 8, 64, 64, 8)

    def test_heads_must_divide(self):
        with pytest.raises(ConfigError):
            DenoiserConfig(d_model=64, n_heads=3, head_dim=16).validate()

    def test_gamma_range(self):
        with pytest.raises(ConfigError):
            DenoiserConfig(gamma=1.5).validate()


class TestForward:
    """Test cases for the network."""

    def test_degenerate_net(self):
        """All-zero weights with an output bias predict that bias."""
        cfg = small_config()
        params = {k: Tensor(np.zeros(s)) for k, s in param_shapes(cfg).items()}
        params["out.b"] = Tensor([0.5, -1.0, 2.0, 0.0])
        rng = np.random.default_rng(4)
        v = forward(rng.normal(size=(3, 4)), 0.3, None, rng.normal(size=5), cfg, params)
        assert np.array_equal(v.data, np.tile([0.5, -1.0, 2.0, 0.0], (3, 1)))

    def test_deterministic(self):
        cfg = small_config()
        params = init_params(cfg, RandomSource(0), zero_output=False)
        x, prompt = np.ones((3, 4)), np.ones(5)
        a = forward(x, 0.4, None, prompt, cfg, params).data
        b = forward(x, 0.4, None, prompt, cfg, params).data
        assert np.array_equal(a, b)

    def test_context_sensitivity(self):
        """Changing one context token changes the prediction."""
        cfg = small_config()
        params = init_params(cfg, RandomSource(0), zero_output=False)
        rng = np.random.default_rng(5)
        keys = rng.normal(size=(cfg.cache_heads, 4, cfg.head_dim))
        values = rng.normal(size=(cfg.cache_heads, 4, cfg.head_dim))
        x, prompt = rng.normal(size=(3, 4)), rng.normal(size=5)
        base = forward(x, 0.5, (Tensor(keys), Tensor(values)), prompt, cfg, params).data
        values[0, 2] += 1.0
        moved = forward(x, 0.5, (Tensor(keys), Tensor(values)), prompt, cfg, params).data
        assert not np.array_equal(base, moved)

    def test_context_mismatch(self):
        cfg = small_config()
        params = init_params(cfg, RandomSource(0))
        bad = Tensor(np.zeros((cfg.cache_heads, 2, cfg.head_dim + 1)))
        with pytest.raises(DimensionError):
            forward(np.zeros((3, 4)), 0.5, (bad, bad), np.ones(5), cfg, params)

    def test_return_kv(self):
        """K/V/Q come back with every layer's heads stacked."""
        cfg = small_config(n_layers=2)
        params = init_params(cfg, RandomSource(0))
        v, kv = forward(np.zeros((3, 4)), 0.2, None, np.ones(5), cfg, params, return_kv=True)
        assert v.shape == (3, 4)
        assert kv.keys.shape == (cfg.cache_heads, 3, cfg.head_dim)
        assert kv.queries.shape == kv.values.shape == kv.keys.shape

    def test_param_names(self):
        shapes = param_shapes(small_config(n_layers=2))
        assert "layer1.attn.q" in shapes
        assert shapes["out.w"] == (8, 4)
        assert shapes["pos"] == (3, 8)


class TestGradients:
    """Finite-difference checks of the training losses."""

    @pytest.mark.parametrize("seed", range(20))
    def test_block_forcing_gradient(self, seed):
        """d L_BF / d params matches central differences on a random small config."""
        rng = np.random.default_rng(seed)
        heads = int(rng.integers(1, 3))
        cfg = small_config(n_heads=heads, d_model=4 * heads, chunk_len=int(rng.integers(2, 4)),
                           gamma=float(rng.uniform()))
        params = init_params(cfg, RandomSource(seed), zero_output=False)
        frames = cfg.chunk_len
        x_t = rng.normal(size=(frames, cfg.latent_dim))
        eps = rng.normal(size=(frames, cfg.latent_dim))
        cond = rng.normal(size=(frames, cfg.latent_dim))
        prompt = rng.normal(size=cfg.embed_dim)
        ctx = (Tensor(rng.normal(size=(cfg.cache_heads, 2, cfg.head_dim))),
               Tensor(rng.normal(size=(cfg.cache_heads, 2, cfg.head_dim))))
        t = float(rng.uniform(0.1, 0.9))

        def loss_with(p):
            return block_forcing_loss(forward(x_t, t, ctx, prompt, cfg, p), eps, cond, cfg.gamma)

        tracked = trainable(params)
        T.backward(loss_with(tracked))
        for name in ("out.w", "layer0.attn.q", "layer0.ff.w1", "prompt.w", "in.b"):
            base = params[name].data

            def f(value, name=name):
                trial = dict(params)
                trial[name] = Tensor(value)
                with T.no_grad():
                    return loss_with(trial).item()

            assert relative_error(tracked[name].grad, numeric_grad(f, base.copy())) <= 1e-4

    @pytest.mark.parametrize("seed", range(20))
    def test_self_forcing_gradient(self, seed):
        """d L_D / d disc params and d L_G / d fake match central differences."""
        rng = np.random.default_rng(100 + seed)
        latent_dim = 3
        disc = Discriminator.init(latent_dim, 4, RandomSource(seed))
        real = [rng.normal(size=(4, latent_dim)) for _ in range(2)]
        fake0 = rng.normal(size=(4, latent_dim))

        tracked = Discriminator(trainable(disc.params))
        loss_d, _ = self_forcing_loss(tracked, real, [fake0])
        T.backward(loss_d)
        for name in ("disc.w1", "disc.b2"):
            def f(value, name=name):
                trial = dict(disc.params)
                trial[name] = Tensor(value)
                return self_forcing_loss(Discriminator(trial), real, [fake0])[0].item()
            grad = tracked.params[name].grad
            assert relative_error(grad, numeric_grad(f, disc.params[name].data.copy())) <= 1e-4

        fake = Tensor(fake0, requires_grad=True)
        _, loss_g = self_forcing_loss(disc, real, [fake])
        T.backward(loss_g)
        numeric = numeric_grad(lambda v: self_forcing_loss(disc, real, [v])[1].item(), fake0.copy())
        assert relative_error(fake.grad, numeric) <= 1e-4


class TestSelfForcingLoss:
    """Test cases for the adversarial losses."""

    def test_uninformative(self):
        """D = 0.5 gives loss_D = 2 ln 2 and loss_G = ln 0.5."""
        loss_d, loss_g = self_forcing_loss(lambda v: Tensor(0.5), [np.zeros(2)], [np.zeros(2)])
        assert loss_d.item() == pytest.approx(2.0 * math.log(2.0), abs=1e-12)
        assert loss_g.item() == pytest.approx(math.log(0.5), abs=1e-12)

    def test_perfect_discriminator(self):
        real, fake = np.ones(2), np.zeros(2)

        def D(v):
            return Tensor(1.0 - 1e-9 if T.as_tensor(v).data[0] == 1.0 else 1e-9)

        loss_d, _ = self_forcing_loss(D, [real], [fake])
        assert loss_d.item() < 1e-8

    def test_hand_arithmetic(self):
        """D(real) = 0.8, D(fake) = 0.3 gives -ln 0.8 - ln 0.7."""
        def D(v):
            return Tensor(0.8 if T.as_tensor(v).data[0] == 1.0 else 0.3)

        loss_d, _ = self_forcing_loss(D, [np.ones(1)], [np.zeros(1)])
        assert loss_d.item() == pytest.approx(-math.log(0.8) - math.log(0.7), abs=1e-12)

    def test_empty(self):
        with pytest.raises(RangeError):
            self_forcing_loss(lambda v: Tensor(0.5), [], [np.zeros(1)])

    def test_discriminator_range(self):
        """Scores stay strictly inside (0, 1) even for extreme inputs."""
        disc = Discriminator.init(3, 8, RandomSource(0))
        for scale in (0.0, 1.0, 1e3):
            score = disc(np.full((5, 3), scale)).item()
            assert 0.0 < score < 1.0

    def test_video_latents(self):
        chunks = [LatentChunk(np.ones((2, 3)), np.ones(4), i) for i in range(3)]
        assert video_latents(chunks).shape == (6, 3)
