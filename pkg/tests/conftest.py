import numpy as np
import pytest
import torch
from PIL import Image

from lapsegen.config import GeneratorConfig, TrainingSchedule
from lapsegen.data import ingest_images, ingest_videos
from lapsegen.model import create_bundle


@pytest.fixture(scope="session")
def tiny_config():
    # 16px output keeps forward passes ~instant
    return GeneratorConfig(num_blocks=3, channel_widths=(16, 16, 8),
                           mapping_depth=3)


@pytest.fixture(scope="session")
def tiny_bundle(tiny_config):
    return create_bundle(tiny_config, seed=11)


@pytest.fixture(scope="session")
def toy_schedule():
    return TrainingSchedule(
        transition_samples=64,
        stabilization_samples=64,
        batch_table={4: 4, 8: 4, 16: 4, 32: 4},
        lr_table={4: 1e-3},
    )


def _write_noise_image(path, side_w, side_h, seed):
    rng = np.random.default_rng(seed)
    base = rng.integers(0, 255, size=(side_h // 4 + 1, side_w // 4 + 1, 3),
                        dtype=np.uint8)
    arr = np.kron(base, np.ones((4, 4, 1), dtype=np.uint8))[:side_h, :side_w]
    Image.fromarray(arr).save(path)


@pytest.fixture(scope="session")
def image_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("images")
    for i in range(16):
        _write_noise_image(root / f"img_{i:03d}.png", 48, 36, seed=100 + i)
    return root


@pytest.fixture(scope="session")
def video_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("videos")
    for v in range(4):
        vdir = root / f"vid_{v}"
        vdir.mkdir()
        for f in range(6):
            _write_noise_image(vdir / f"frame_{f:03d}.png", 64, 64,
                               seed=1000 + 10 * v + f)
    return root


@pytest.fixture(scope="session")
def image_dataset(image_dir):
    return ingest_images(image_dir, resolution=16)


@pytest.fixture(scope="session")
def video_dataset(video_dir):
    # stored at 2x the model resolution so crop pairs exist at every stage
    return ingest_videos(video_dir, resolution=32)


@pytest.fixture()
def torch_rng():
    return torch.Generator().manual_seed(1234)
