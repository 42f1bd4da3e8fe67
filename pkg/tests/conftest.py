import numpy as np
import pytest
import torch

from protoreg.config import TrainConfig
from protoreg.data.synthetic import SynthSpec, generate_synthetic_dataset


def tiny_spec(grid=24, frames=16, period=8):
    """A spec small enough for fast integration tests."""
    h = grid
    return SynthSpec(grid_size=(h, h), num_frames=frames, period_frames=period,
                     area_max=100.0, area_min=40.0, noise_std=0.03)


def tiny_config(**overrides):
    """Config matched to tiny_spec data: 24x24 frames, 8-frame clips."""
    defaults = dict(img_size=24, clip_length=8, epochs=2, batch_size=4, m=4,
                    max_rotate_degrees=10.0)
    defaults.update(overrides)
    return TrainConfig.desk_scale(**defaults)


@pytest.fixture(scope="session")
def tiny_splits():
    return generate_synthetic_dataset(
        {"train": 12, "val": 4, "test": 4}, base_spec=tiny_spec(), seed=7
    )


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(0)
    np.random.seed(0)
