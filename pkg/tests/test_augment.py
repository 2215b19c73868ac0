import json

import numpy as np
import pytest

from mstsr import augment as au
from mstsr import resample as rs
from mstsr.augment import AugmentationSpec, make_rng, pair_at_index, splitmix64


def _spec(**kw):
    base = dict(method="mstbic", sr_factor=2, crop_h=16, crop_w=16)
    base.update(kw)
    return AugmentationSpec(**base)


class TestRngPlumbing:
    def test_splitmix_deterministic(self):
        assert splitmix64(1, 2, 3) == splitmix64(1, 2, 3)
        assert splitmix64(1, 2, 3) != splitmix64(1, 2, 4)
        assert splitmix64(0) != splitmix64(1)

    def test_splitmix_order_sensitive(self):
        assert splitmix64(1, 2) != splitmix64(2, 1)

    def test_make_rng_reproducible(self):
        a = make_rng(5, 9).random(4)
        b = make_rng(5, 9).random(4)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, make_rng(5, 10).random(4))


class TestSpecValidation:
    def test_rejects_unknown_method(self):
        with pytest.raises(au.AugmentError):
            _spec(method="zssr")

    def test_rejects_bad_range(self):
        with pytest.raises(au.AugmentError):
            _spec(alpha_min=1.1)
        with pytest.raises(au.AugmentError):
            _spec(beta_max=0.9)

    def test_rejects_bad_probs(self):
        with pytest.raises(au.AugmentError):
            _spec(branch_probs=(0.5, 0.5, 0.5))

    def test_rejects_unknown_kernel(self):
        with pytest.raises(au.AugmentError):
            _spec(down_kernels={"gauss": 1.0})

    def test_round_trips_dict(self):
        s = _spec(alpha_min=0.8, beta_max=1.2)
        assert AugmentationSpec.from_dict(json.loads(json.dumps(s.to_dict()))) == s


class TestScaleGrid:
    def test_nine_values_one_unit(self):
        grid = au.make_scale_grid(_spec(alpha_min=0.9, beta_max=1.1))
        assert grid.size == 9
        assert np.count_nonzero(grid == 1.0) == 1

    def test_equidistant_halves(self):
        grid = au.make_scale_grid(_spec(alpha_min=0.8, beta_max=1.2))
        down, up = grid[:5], grid[4:]
        assert np.allclose(np.diff(down), np.diff(down)[0])
        assert np.allclose(np.diff(up), np.diff(up)[0])
        assert grid[0] == 0.8 and grid[-1] == pytest.approx(1.2)

    def test_degenerate_range_is_identity_only(self):
        grid = au.make_scale_grid(_spec(alpha_min=1.0, beta_max=1.0))
        assert np.array_equal(grid, [1.0])

    def test_rejects_even_steps(self):
        with pytest.raises(au.AugmentError):
            au.make_scale_grid(_spec(scale_steps=8))


class TestSampleScale:
    def test_infeasible_down_falls_through_to_identity(self):
        # source exactly pseudo-HR size: every downscale is infeasible
        spec = _spec()
        rng = make_rng(0, 0)
        results = {au.sample_scale(spec, rng, spec.hr_h, spec.hr_w)[0]
                   for _ in range(200)}
        assert all(f >= 1.0 for f in results)
        assert 1.0 in results

    def test_too_small_source_raises(self):
        spec = _spec()
        with pytest.raises(au.AugmentError):
            au.sample_scale(spec, make_rng(0, 0), spec.hr_h - 1, spec.hr_w)

    def test_factors_come_from_grid(self):
        spec = _spec(alpha_min=0.9, beta_max=1.1)
        grid = set(np.round(au.make_scale_grid(spec), 12))
        rng = make_rng(3, 1)
        for _ in range(300):
            f, _k = au.sample_scale(spec, rng, 400, 400)
            assert round(f, 12) in grid


class TestPairGeneration:
    def test_deterministic_by_index(self, fixture_images):
        imgs = [v for v in fixture_images.values() if min(v.shape[:2]) >= 48]
        spec = _spec()
        a = pair_at_index(imgs, spec, 11, 42)
        b = pair_at_index(imgs, spec, 11, 42)
        assert np.array_equal(a.pseudo_hr, b.pseudo_hr)
        assert np.array_equal(a.pseudo_lr, b.pseudo_lr)
        assert a.provenance == b.provenance
        c = pair_at_index(imgs, spec, 11, 43)
        assert not np.array_equal(a.pseudo_hr, c.pseudo_hr)

    def test_stream_restartable(self, fixture_images):
        imgs = [v for v in fixture_images.values() if min(v.shape[:2]) >= 48]
        spec = _spec()
        full = [s.provenance for s in au.pair_stream(imgs, spec, 5, count=6)]
        tail = [s.provenance for s in au.pair_stream(imgs, spec, 5, count=3, start=3)]
        assert full[3:] == tail

    @pytest.mark.parametrize("preset", ["mstbic-default", "simusr-default",
                                        "mst-original"])
    def test_pair_consistency_invariant(self, fixture_images, preset):
        d = au.load_presets()[preset].to_dict()
        d.update(sr_factor=2, crop_h=16, crop_w=16)
        spec = AugmentationSpec.from_dict(d)
        imgs = [v for v in fixture_images.values() if min(v.shape[:2]) >= 48]
        for i in range(60):
            s = pair_at_index(imgs, spec, 21, i)
            assert s.pseudo_hr.shape == (32, 32, 3)
            assert s.pseudo_lr.shape == (16, 16, 3)
            want = rs.downscale_by_int(s.pseudo_hr, 2, spec.degradation_kernels[0]
                                       if len(spec.degradation_kernels) == 1
                                       else s.provenance["degradation_kernel"])
            assert np.array_equal(s.pseudo_lr, want)

    @pytest.mark.parametrize("preset", ["mstbic-default", "simusr-default",
                                        "mst-original"])
    def test_stats_only_matches_pixel_path(self, fixture_images, preset):
        d = au.load_presets()[preset].to_dict()
        d.update(sr_factor=2, crop_h=16, crop_w=16)
        spec = AugmentationSpec.from_dict(d)
        imgs = [v for v in fixture_images.values() if min(v.shape[:2]) >= 48]
        for i in range(120):
            fast = pair_at_index(imgs, spec, 31, i, stats_only=True)
            slow = pair_at_index(imgs, spec, 31, i)
            assert fast.provenance == slow.provenance
            assert fast.pseudo_hr is None and fast.pseudo_lr is None

    def test_simusr_gamma_in_range(self, fixture_images):
        imgs = [v for v in fixture_images.values() if min(v.shape[:2]) >= 64]
        spec = _spec(method="simusr", branch_probs=(0.5, 0.2, 0.3))
        gammas = [
            pair_at_index(imgs, spec, 2, i, stats_only=True).provenance["gamma"]
            for i in range(300)
        ]
        drawn = [g for g in gammas if g is not None]
        assert drawn
        assert all(spec.gamma_min <= g < 1.0 for g in drawn)

    def test_empty_image_list_raises(self):
        with pytest.raises(au.AugmentError):
            pair_at_index([], _spec(), 0, 0)

    def test_provenance_json_serializable(self, fixture_images):
        imgs = [v for v in fixture_images.values() if min(v.shape[:2]) >= 48]
        prov = pair_at_index(imgs, _spec(), 0, 0).provenance
        assert json.loads(json.dumps(prov)) == prov


class TestPresets:
    def test_required_presets_present(self):
        presets = au.load_presets()
        for name in ("mstbic-default", "simusr-default", "mst-original",
                     "table3-noscale", "table3-09-11"):
            assert name in presets

    def test_default_probs(self):
        presets = au.load_presets()
        assert presets["mstbic-default"].branch_probs == pytest.approx(
            (4 / 9, 1 / 9, 4 / 9)
        )
        assert presets["simusr-default"].branch_probs == pytest.approx(
            (0.5, 0.2, 0.3)
        )

    def test_mst_original_range_and_kernels(self):
        p = au.load_presets()["mst-original"]
        assert p.alpha_min == 0.25 and p.beta_max == 2.5
        assert len(p.degradation_kernels) == 6
