import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from styleforge import architecture as arch
from styleforge.model import NetworkModel
from styleforge.weights_io import WeightFile, write_weight_file

# Channel means of the canonical training corpus, RGB order.
DEFAULT_MEANS = np.array([123.68, 116.779, 103.939], dtype=np.float32)


def build_random_weight_file(seed=1234) -> WeightFile:
    """A full parameter set with variance-scaled random conv kernels.

    The tests exercise numerics and plumbing, not recognition quality, so
    random filters with sane scaling (variance 2 / fan-in, the usual
    choice for rectified layers) are sufficient and keep the suite
    self-contained.
    """
    rng = np.random.default_rng(seed)
    entries = {}
    for name, (cin, cout) in arch.CONV_CHANNELS.items():
        std = np.sqrt(2.0 / (cin * 9))
        entries[name + ".weight"] = rng.normal(0.0, std, size=(cout, cin, 3, 3)).astype(
            np.float32
        )
        entries[name + ".bias"] = rng.normal(0.0, 0.05, size=(cout,)).astype(np.float32)
    return WeightFile(
        channel_means=DEFAULT_MEANS.copy(), channel_order="rgb", entries=entries
    )


@pytest.fixture(scope="session")
def weight_file() -> WeightFile:
    return build_random_weight_file()


@pytest.fixture(scope="session")
def model_path(weight_file, tmp_path_factory):
    path = tmp_path_factory.mktemp("weights") / "features.sfw"
    write_weight_file(path, weight_file)
    return path


@pytest.fixture(scope="session")
def model(weight_file) -> NetworkModel:
    return NetworkModel.from_weight_file(weight_file, pooling="average")


def checker_image(h, w, tile=8, dtype=np.float64):
    """Deterministic two-tone checkerboard with smooth colour gradients."""
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    board = ((yy // tile + xx // tile) % 2).astype(dtype)
    img = np.stack(
        [
            0.2 + 0.6 * board,
            0.3 + 0.4 * (yy / max(h - 1, 1)),
            0.8 - 0.5 * (xx / max(w - 1, 1)),
        ]
    )
    return img.astype(dtype)


def blob_image(h, w, seed, dtype=np.float64):
    """Smooth random blobs: band-limited noise pushed through a sigmoid."""
    rng = np.random.default_rng(seed)
    small = rng.normal(0.0, 1.0, size=(3, max(h // 8, 2), max(w // 8, 2)))
    from styleforge.tensor_nn import resample_bilinear

    big = resample_bilinear(small, h, w)
    return (1.0 / (1.0 + np.exp(-2.0 * big))).astype(dtype)


@pytest.fixture()
def content_96():
    return checker_image(96, 96)


@pytest.fixture()
def style_96():
    return blob_image(96, 96, seed=77)
