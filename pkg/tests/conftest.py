import numpy as np
import pytest

from flowsteer import RngStream, VideoLatent


@pytest.fixture
def rng():
    return RngStream(2024)


def random_latent(rng: RngStream, dims=(1, 2, 3, 4, 4), scale=1.0) -> VideoLatent:
    data = (rng.normals(int(np.prod(dims))) * scale).astype(np.float32)
    return VideoLatent(data.reshape(dims))


@pytest.fixture
def make_latent(rng):
    def _make(dims=(1, 2, 3, 4, 4), scale=1.0):
        return random_latent(rng, dims, scale)

    return _make
