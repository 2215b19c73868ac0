import os

import numpy as np
import pytest

from mstsr import datasets as ds
from mstsr import image as im

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
GOLDEN_MANIFEST = os.path.join(REPO_ROOT, "goldens", "manifest.json")


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fixtures")
    ds.make_fixtures(str(out), seed=0)
    return str(out)


@pytest.fixture(scope="session")
def fixture_images(fixture_dir):
    return {
        os.path.splitext(f)[0]: im.load_png(os.path.join(fixture_dir, f))
        for f in sorted(os.listdir(fixture_dir))
    }


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)
