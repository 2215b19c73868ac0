import json
import os

import numpy as np
import pytest

from mstsr import datasets as ds
from mstsr import image as im
from mstsr import metrics as mx


def _noisy(img, rng, amp):
    n = rng.integers(-amp, amp + 1, img.shape)
    return np.clip(img.astype(int) + n, 0, 255).astype(np.uint8)


class TestPsnr:
    def test_black_vs_white_oracle(self):
        # Y(black)=16, Y(white)=235: 10*log10(255^2/219^2) = 1.3219 dB
        black = np.zeros((32, 32, 3), np.uint8)
        white = np.full((32, 32, 3), 255, np.uint8)
        assert mx.psnr_y(black, white) == pytest.approx(
            10 * np.log10(255**2 / 219**2), abs=1e-9
        )

    def test_identical_is_infinite(self, rng):
        img = rng.integers(0, 256, (20, 20, 3)).astype(np.uint8)
        assert mx.psnr_y(img, img) == float("inf")

    def test_shave_excludes_border(self, rng):
        img = rng.integers(0, 256, (24, 24, 3)).astype(np.uint8)
        bad = img.copy()
        bad[0, :] = 255 - bad[0, :]  # corrupt only the border row
        assert mx.psnr_y(img, bad, shave=2) == float("inf")
        assert mx.psnr_y(img, bad, shave=0) < 40

    def test_noise_monotonic(self, rng):
        img = rng.integers(0, 256, (32, 32, 3)).astype(np.uint8)
        assert (mx.psnr_y(img, _noisy(img, rng, 5))
                > mx.psnr_y(img, _noisy(img, rng, 40)))

    def test_dimension_mismatch(self, rng):
        a = rng.integers(0, 256, (8, 8, 3)).astype(np.uint8)
        b = rng.integers(0, 256, (8, 9, 3)).astype(np.uint8)
        with pytest.raises(mx.MetricError):
            mx.psnr_y(a, b)

    def test_excessive_shave(self, rng):
        img = rng.integers(0, 256, (8, 8, 3)).astype(np.uint8)
        with pytest.raises(mx.MetricError):
            mx.psnr_y(img, img, shave=4)


def _ssim_naive(x, y):
    """Direct per-window loop implementation for cross-checking."""
    win = mx._gaussian_window(11, 1.5)
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    H, W = x.shape
    vals = []
    for i in range(H - 10):
        for j in range(W - 10):
            a = x[i : i + 11, j : j + 11]
            b = y[i : i + 11, j : j + 11]
            mu1 = (a * win).sum()
            mu2 = (b * win).sum()
            s1 = (a * a * win).sum() - mu1**2
            s2 = (b * b * win).sum() - mu2**2
            s12 = (a * b * win).sum() - mu1 * mu2
            vals.append(((2 * mu1 * mu2 + c1) * (2 * s12 + c2))
                        / ((mu1**2 + mu2**2 + c1) * (s1 + s2 + c2)))
    return float(np.mean(vals))


class TestSsim:
    def test_identity_is_one(self, rng):
        img = rng.integers(0, 256, (20, 20, 3)).astype(np.uint8)
        assert mx.ssim_y(img, img) == pytest.approx(1.0)

    def test_symmetry(self, rng):
        a = rng.integers(0, 256, (24, 24, 3)).astype(np.uint8)
        b = _noisy(a, rng, 25)
        assert mx.ssim_y(a, b) == pytest.approx(mx.ssim_y(b, a), abs=1e-12)

    def test_matches_naive_windowed_loop(self, rng):
        a = rng.integers(0, 256, (16, 18, 3)).astype(np.uint8)
        b = _noisy(a, rng, 30)
        want = _ssim_naive(im.rgb_to_y(a), im.rgb_to_y(b))
        assert mx.ssim_y(a, b) == pytest.approx(want, abs=1e-9)

    def test_noise_monotonic(self, rng):
        img = rng.integers(0, 256, (32, 32, 3)).astype(np.uint8)
        assert (mx.ssim_y(img, _noisy(img, rng, 5))
                > mx.ssim_y(img, _noisy(img, rng, 60)))

    def test_too_small_raises(self, rng):
        img = rng.integers(0, 256, (9, 9, 3)).astype(np.uint8)
        with pytest.raises(mx.MetricError):
            mx.ssim_y(img, img)


class TestErrorMap:
    def test_shape_and_dtype(self, rng):
        a = rng.integers(0, 256, (12, 10, 3)).astype(np.uint8)
        b = _noisy(a, rng, 20)
        m = mx.error_map(a, b)
        assert m.shape == (12, 10, 3) and m.dtype == np.uint8

    def test_identical_images_flat_map(self, rng):
        a = rng.integers(0, 256, (8, 8, 3)).astype(np.uint8)
        m = mx.error_map(a, a)
        assert len(np.unique(m.reshape(-1, 3), axis=0)) == 1


class TestEvaluate:
    def test_bicubic_report_artifacts(self, fixture_dir, tmp_path):
        man = ds.scan(fixture_dir, "flat")
        man.entries = [e for e in man.entries if "48x48" in e.image_id]
        out = str(tmp_path / "rep")
        rep = mx.evaluate("bicubic", man, 2, out_dir=out, error_maps=True)
        assert len(rep.per_image) == 4
        assert np.isfinite(rep.mean_psnr) and 0 < rep.mean_ssim <= 1
        for f in ("report.json", "report.txt", "report.csv", "report.png"):
            assert os.path.exists(os.path.join(out, f)), f
        with open(os.path.join(out, "report.json")) as f:
            d = json.load(f)
        assert d["aggregate"]["psnr_db"] == pytest.approx(rep.mean_psnr)
        assert d["conventions"]["ssim_window"] == 11
        maps = [f for f in os.listdir(out) if f.endswith("_error.png")]
        assert len(maps) == 4

    def test_model_method_needs_checkpoint(self, fixture_dir):
        man = ds.scan(fixture_dir, "flat")
        with pytest.raises(mx.MetricError):
            mx.evaluate("model", man, 2)

    def test_unknown_method(self, fixture_dir):
        man = ds.scan(fixture_dir, "flat")
        with pytest.raises(mx.MetricError):
            mx.evaluate("nearest", man, 2)

    def test_table_and_csv_row_counts(self, fixture_dir):
        man = ds.scan(fixture_dir, "flat")
        man.entries = man.entries[:3]
        rep = mx.evaluate("bicubic", man, 2)
        assert len(rep.table().splitlines()) == 3 + 4  # header, rule, rows, rule, mean
        assert len(rep.csv().strip().splitlines()) == 3 + 2
