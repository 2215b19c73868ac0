import os

import numpy as np
import pytest

from mstsr import datasets as ds
from mstsr import image as im
from mstsr import resample as rs


def _write(path, h=12, w=12, val=100):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    im.save_png(np.full((h, w, 3), val, dtype=np.uint8), path)


class TestScan:
    def test_flat(self, tmp_path):
        for n in ("b", "a", "c"):
            _write(str(tmp_path / f"{n}.png"))
        man = ds.scan(str(tmp_path), "flat")
        assert [e.image_id for e in man.entries] == ["a", "b", "c"]
        assert all(e.lr_path is None for e in man.entries)

    def test_flat_empty_raises(self, tmp_path):
        with pytest.raises(ds.DatasetError):
            ds.scan(str(tmp_path), "flat")

    def test_missing_dir_raises(self, tmp_path):
        with pytest.raises(ds.DatasetError):
            ds.scan(str(tmp_path / "nope"), "flat")

    def test_paired_directories(self, tmp_path):
        for n in ("a", "b"):
            _write(str(tmp_path / "HR" / f"{n}.png"), 8, 8)
            _write(str(tmp_path / "LRx2" / f"{n}.png"), 4, 4)
        man = ds.scan(str(tmp_path), "paired", 2)
        assert len(man.entries) == 2
        assert all(e.hr_path and e.lr_path for e in man.entries)

    def test_paired_orphan_lr_raises(self, tmp_path):
        _write(str(tmp_path / "HR" / "a.png"))
        _write(str(tmp_path / "LRx2" / "a.png"))
        _write(str(tmp_path / "LRx2" / "ghost.png"))
        with pytest.raises(ds.DatasetError, match="orphan"):
            ds.scan(str(tmp_path), "paired", 2)

    def test_paired_unmatched_hr_raises(self, tmp_path):
        _write(str(tmp_path / "HR" / "a.png"))
        _write(str(tmp_path / "LRx2" / "b.png"))
        with pytest.raises(ds.DatasetError, match="unmatched"):
            ds.scan(str(tmp_path), "paired", 2)

    def test_paired_suffix_convention(self, tmp_path):
        _write(str(tmp_path / "img.png"), 8, 8)
        _write(str(tmp_path / "imgx2.png"), 4, 4)
        man = ds.scan(str(tmp_path), "paired", 2)
        assert len(man.entries) == 1
        assert man.entries[0].image_id == "img"

    def test_div2k_layout(self, tmp_path):
        _write(str(tmp_path / "DIV2K_train_HR" / "0001.png"), 8, 8)
        _write(str(tmp_path / "DIV2K_train_LR_bicubic" / "X2" / "0001x2.png"), 4, 4)
        _write(str(tmp_path / "DIV2K_train_HR" / "0002.png"), 8, 8)
        man = ds.scan(str(tmp_path), "div2k", 2)
        assert len(man.entries) == 2
        assert man.entries[0].lr_path is not None
        assert man.entries[1].lr_path is None

    def test_unknown_layout(self, tmp_path):
        _write(str(tmp_path / "a.png"))
        with pytest.raises(ds.DatasetError):
            ds.scan(str(tmp_path), "stack")


class TestManifestIo:
    def test_save_load_round_trip(self, tmp_path):
        for n in ("a", "b"):
            _write(str(tmp_path / f"{n}.png"))
        man = ds.scan(str(tmp_path), "flat")
        p = str(tmp_path / "manifest.json")
        man.save(p)
        back = ds.Manifest.load(p)
        assert back.to_dict() == man.to_dict()


class TestDeriveLr:
    def test_dims_and_consistency(self, tmp_path, rng):
        src = rng.integers(0, 256, (13, 19, 3)).astype(np.uint8)
        im.save_png(src, str(tmp_path / "x.png"))
        man = ds.scan(str(tmp_path), "flat")
        out = ds.derive_lr(man, 4, str(tmp_path / "lr"))
        lr = im.load_png(out.entries[0].lr_path)
        assert lr.shape == (3, 4, 3)
        want = rs.downscale_by_int(np.ascontiguousarray(src[:12, :16]), 4)
        assert np.array_equal(lr, want)

    def test_too_small_raises(self, tmp_path):
        _write(str(tmp_path / "t.png"), 3, 3)
        man = ds.scan(str(tmp_path), "flat")
        with pytest.raises(ds.DatasetError):
            ds.derive_lr(man, 4, str(tmp_path / "lr"))


class TestFixtures:
    def test_deterministic(self, tmp_path):
        a = ds.make_fixtures(str(tmp_path / "a"), seed=0)
        b = ds.make_fixtures(str(tmp_path / "b"), seed=0)
        assert [os.path.basename(p) for p in a] == [os.path.basename(p) for p in b]
        for pa, pb in zip(a, b):
            with open(pa, "rb") as fa, open(pb, "rb") as fb:
                assert fa.read() == fb.read()

    def test_expected_inventory(self, fixture_dir):
        names = sorted(os.listdir(fixture_dir))
        assert len(names) == 4 * len(ds.FIXTURE_SIZES)
        for h, w in ds.FIXTURE_SIZES:
            for kind in ("gradient", "checker", "noise", "glyphs"):
                assert f"{kind}_{h}x{w}.png" in names

    def test_seed_changes_noise(self, tmp_path):
        a = ds.make_fixtures(str(tmp_path / "a"), seed=0)
        c = ds.make_fixtures(str(tmp_path / "c"), seed=9)
        name = "noise_48x48.png"
        pa = [p for p in a if p.endswith(name)][0]
        pc = [p for p in c if p.endswith(name)][0]
        assert not np.array_equal(im.load_png(pa), im.load_png(pc))

    def test_all_loadable_rgb(self, fixture_images):
        for name, img in fixture_images.items():
            assert img.dtype == np.uint8 and img.ndim == 3 and img.shape[2] == 3
