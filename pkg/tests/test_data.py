import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from neurop_diff.data import (
    DatasetConfig,
    build_pairs,
    center_crop,
    degrade,
    load_dataset,
    lr_size,
    make_pair,
    max_scale,
    read_image,
    sample_scale,
    synthetic_scene,
    to_tensor,
    to_uint8,
    write_png,
    write_synthetic_dataset,
)
from neurop_diff.errors import DataError
from neurop_diff.neural_operator import NeuralOperator, OperatorConfig, target_size


def _write_rgb(path, h, w, seed=0):
    arr = np.random.default_rng(seed).integers(0, 256, (h, w, 3), dtype=np.uint8)
    Image.fromarray(arr).save(path)
    return arr


class TestImageIO:
    def test_normalisation_endpoints(self):
        img = Image.fromarray(np.array([[[0, 255, 128]]], dtype=np.uint8))
        x = to_tensor(img)
        np.testing.assert_allclose(x[:, 0, 0].numpy(), [-1.0, 1.0, 128 / 127.5 - 1], atol=1e-6)

    def test_png_round_trip(self, tmp_path):
        arr = _write_rgb(tmp_path / "a.png", 9, 7)
        x = read_image(tmp_path / "a.png")
        write_png(x, tmp_path / "b.png")
        np.testing.assert_array_equal(np.asarray(Image.open(tmp_path / "b.png")), arr)
        np.testing.assert_array_equal(to_uint8(x), arr)

    def test_center_crop_offset(self):
        x = torch.arange(300 * 300, dtype=torch.float32).reshape(1, 300, 300)
        c = center_crop(x, 256)
        assert c.shape == (1, 256, 256)
        assert c[0, 0, 0].item() == 22 * 300 + 22


class TestLoadDataset:
    def test_split_counts(self, tmp_path):
        write_synthetic_dataset(tmp_path, 10, 48, seed=0)
        ds = load_dataset(DatasetConfig(root=str(tmp_path), hr_size=48, split=0.8, seed=0))
        assert len(ds.train) == 8 and len(ds.eval) == 2
        assert set(ds.train_names).isdisjoint(ds.eval_names)
        assert ds.train[0].shape == (3, 48, 48)

    def test_split_reproducible(self, tmp_path):
        write_synthetic_dataset(tmp_path, 10, 48, seed=0)
        cfg = DatasetConfig(root=str(tmp_path), hr_size=48, seed=5)
        assert load_dataset(cfg).eval_names == load_dataset(cfg).eval_names

    def test_skips_bad_and_small(self, tmp_path, caplog):
        write_synthetic_dataset(tmp_path, 2, 48, seed=0)
        (tmp_path / "broken.png").write_bytes(b"not an image")
        _write_rgb(tmp_path / "tiny.png", 20, 20)
        ds = load_dataset(DatasetConfig(root=str(tmp_path), hr_size=48, split=1.0))
        assert len(ds.train) == 2
        assert "broken.png" in caplog.text and "tiny.png" in caplog.text

    def test_empty_and_missing(self, tmp_path):
        with pytest.raises(DataError):
            load_dataset(DatasetConfig(root=str(tmp_path), hr_size=48))
        with pytest.raises(DataError):
            load_dataset(DatasetConfig(root=str(tmp_path / "nope"), hr_size=48))


class TestScales:
    def test_uniform_mean(self):
        s = sample_scale(np.random.default_rng(0), 8.0, size=100_000)
        assert np.all((s > 1.0) & (s <= 8.0))
        assert abs(s.mean() - 4.5) < 0.045

    def test_reproducible(self):
        a = sample_scale(np.random.default_rng(1), 8.0, size=10)
        b = sample_scale(np.random.default_rng(1), 8.0, size=10)
        np.testing.assert_array_equal(a, b)

    def test_cap(self):
        assert max_scale(48, 8.0) == 6.0
        assert max_scale(256, 8.0) == 8.0


class TestDegrade:
    def test_integer_factor(self):
        assert degrade(torch.zeros(3, 256, 256), 4.0).shape == (3, 64, 64)

    def test_near_one(self):
        assert degrade(torch.zeros(3, 48, 48), 1.0001).shape == (3, 47, 47)

    def test_constant_preserved(self):
        out = degrade(torch.full((3, 48, 48), 0.3), 2.7)
        np.testing.assert_allclose(out.numpy(), 0.3, atol=1e-6)

    def test_range_and_determinism(self):
        hr = synthetic_scene(48, np.random.default_rng(0))
        a, b = degrade(hr, 3.3), degrade(hr, 3.3)
        assert torch.equal(a, b)
        assert a.min() >= -1 and a.max() <= 1

    def test_too_small(self):
        with pytest.raises(DataError):
            degrade(torch.zeros(3, 48, 48), 7.0)
        with pytest.raises(ValueError):
            degrade(torch.zeros(3, 48, 48), 1.0)


class TestPairs:
    def test_basic_pair(self):
        p = make_pair(torch.zeros(3, 48, 48), 2.0)
        assert p.lr.shape == (3, 24, 24) and p.s == 2.0
        assert target_size(24, p.s) == 48

    @settings(max_examples=150, deadline=None)
    @given(hr=st.integers(16, 300), u=st.floats(0.0, 1.0))
    def test_property_size_invariant(self, hr, u):
        s = 1.0 + (max_scale(hr, 8.0) - 1.0) * u + 1e-9
        n = lr_size(hr, s)
        if n < 8:
            return
        s_eff = hr / n
        assert target_size(n, s_eff) == hr
        assert 1.0 < s_eff

    def test_operator_target_matches_hr(self):
        op = NeuralOperator(OperatorConfig(d_r=8, num_layers=1, encoder_blocks=1, encoder_channels=8, head_hidden=8))
        hr = synthetic_scene(48, np.random.default_rng(1))
        for p in build_pairs([hr] * 5, 8.0, seed=3):
            assert op(p.lr[None], p.s).shape[-2:] == hr.shape[-2:]

    def test_build_pairs_worker_independent(self):
        rng = np.random.default_rng(2)
        hrs = [synthetic_scene(48, rng) for _ in range(6)]
        a = build_pairs(hrs, 8.0, seed=9, workers=1)
        b = build_pairs(hrs, 8.0, seed=9, workers=3)
        assert [p.s for p in a] == [p.s for p in b]
        assert all(torch.equal(x.lr, y.lr) for x, y in zip(a, b))
