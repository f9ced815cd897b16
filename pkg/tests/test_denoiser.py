import numpy as np
import pytest
import torch

from neurop_diff.denoiser import DenoiserConfig, GammaEmbedding, UNet, embed_gamma_features, predict_noise
from neurop_diff.schedule import make_schedule

from oracles import grad_check

TINY = DenoiserConfig(base_channels=8, depth=2, dropout=0.2, gamma_embed_dim=16)


def _inputs(size, batch=2, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    y = torch.randn(batch, 3, size, size, generator=g, dtype=dtype)
    z = torch.randn(batch, 3, size, size, generator=g, dtype=dtype)
    return y, z


class TestConfig:
    @pytest.mark.parametrize("kw", [{"dropout": 1.0}, {"dropout": -0.1}, {"depth": 0}, {"channel_mult": (1, 2)}])
    def test_rejects_invalid(self, kw):
        with pytest.raises(ValueError):
            DenoiserConfig(**kw)

    def test_default_mult(self):
        assert DenoiserConfig(depth=3).channel_mult == (1, 2, 2, 2)


class TestGammaEmbedding:
    def test_deterministic_and_injective(self):
        emb = GammaEmbedding(32)
        g = torch.tensor([0.5, 0.5 + 1e-6], dtype=torch.float64)
        emb = emb.double()
        a, b = emb(g), emb(g)
        assert torch.equal(a, b)
        assert torch.max(torch.abs(a[0] - a[1])).item() > 0

    def test_smallest_gamma_finite(self):
        s = make_schedule(T=2000)
        f = embed_gamma_features(torch.tensor([s.gamma[-1]]), 64)
        assert torch.isfinite(f).all() and torch.isfinite(GammaEmbedding(64)(torch.tensor([s.gamma[-1]]))).all()

    @pytest.mark.parametrize("g", [0.0, -0.5, 1.5])
    def test_range(self, g):
        with pytest.raises(ValueError):
            embed_gamma_features(torch.tensor([g]), 8)


class TestUNet:
    @pytest.mark.parametrize("size", [32, 64])
    def test_shape(self, size):
        net = UNet(DenoiserConfig(base_channels=8, depth=3))
        y, z = _inputs(size)
        assert net(y, z, torch.tensor([0.3, 0.9])).shape == z.shape

    def test_indivisible_and_mismatch(self):
        net = UNet(TINY)
        y, z = _inputs(16)
        with pytest.raises(ValueError):
            net(y[..., :14, :14], z[..., :14, :14], 0.5)
        with pytest.raises(ValueError):
            net(y[..., :8, :8], z, 0.5)
        with pytest.raises(ValueError):
            net(torch.cat([y, y], dim=1), z, 0.5)

    def test_eval_ignores_generator(self):
        net = UNet(TINY)
        y, z = _inputs(16)
        a = predict_noise(net, y, z, 0.4, mode="eval", generator=torch.Generator().manual_seed(0))
        b = predict_noise(net, y, z, 0.4, mode="eval", generator=torch.Generator().manual_seed(1))
        assert torch.equal(a, b)

    def test_train_mode_seeded_dropout(self):
        net = UNet(TINY)
        y, z = _inputs(16)
        a = predict_noise(net, y, z, 0.4, mode="train", generator=torch.Generator().manual_seed(0))
        b = predict_noise(net, y, z, 0.4, mode="train", generator=torch.Generator().manual_seed(0))
        c = predict_noise(net, y, z, 0.4, mode="train", generator=torch.Generator().manual_seed(1))
        assert torch.equal(a, b)
        assert not torch.equal(a, c)

    def test_mode_restored(self):
        net = UNet(TINY).train()
        predict_noise(net, *_inputs(16), 0.4, mode="eval")
        assert net.training
        with pytest.raises(ValueError):
            predict_noise(net, *_inputs(16), 0.4, mode="sample")

    def test_gamma_path_live(self):
        net = UNet(TINY).eval()
        y, z = _inputs(16)
        s = make_schedule(T=2000)
        a = net(y, z, s.gamma_at(1))
        b = net(y, z, s.gamma_at(2000))
        assert torch.max(torch.abs(a - b)).item() > 0

    def test_prior_path_live(self):
        net = UNet(TINY).eval()
        y, z = _inputs(16)
        assert torch.max(torch.abs(net(y, z, 0.5) - net(torch.zeros_like(y), z, 0.5))).item() > 0

    def test_wide_prior(self):
        net = UNet(DenoiserConfig(base_channels=8, depth=2, cond_channels=12))
        z = torch.randn(1, 3, 16, 16)
        assert net(torch.randn(1, 12, 16, 16), z, 0.5).shape == z.shape

    def test_parameter_gradients(self):
        torch.manual_seed(0)
        net = UNet(DenoiserConfig(base_channels=8, depth=2, dropout=0.0, gamma_embed_dim=16)).double().eval()
        y, z = _inputs(16, batch=1, dtype=torch.float64)
        g = torch.tensor([0.37], dtype=torch.float64)
        rows = grad_check(net, lambda: net(y, z, g).abs().mean(), n_probe=60, seed=2)
        worst = max(r[-1] for r in rows)
        assert worst < 1e-3, rows
