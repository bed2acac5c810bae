import numpy as np
import pytest

from panoweave.latent import PanoLatent


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_latent(rng, frames=2, channels=3, height=8, width=16,
                  h_ring=True, t_ring=False) -> PanoLatent:
    data = rng.standard_normal((frames, channels, height, width)).astype(np.float32)
    return PanoLatent(data, h_ring=h_ring, t_ring=t_ring)
