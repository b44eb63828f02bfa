import os
import sys
from collections import namedtuple

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from qpf.patches import load_image  # noqa: E402
import trained_fixtures  # noqa: E402

TrainedRun = namedtuple("TrainedRun", "codec images train_seconds")


@pytest.fixture(scope="session")
def toy_overfit(tmp_path_factory) -> TrainedRun:
    """Toy profile trained 2000 steps on one 256x256 image (criterion 4 run)."""
    root = tmp_path_factory.mktemp("overfit")
    codec, paths, seconds = trained_fixtures.one_image_overfit(root)
    return TrainedRun(codec, [load_image(p) for p in paths], seconds)


@pytest.fixture(scope="session")
def toy_multi(tmp_path_factory) -> TrainedRun:
    """Toy profile trained on the band-limited image family (96 samples,
    horizontal flips); only the first few images ride along for tests."""
    root = tmp_path_factory.mktemp("multi")
    codec, paths, seconds = trained_fixtures.multi_image_run(root)
    return TrainedRun(codec, [load_image(p) for p in paths[:8]], seconds)
