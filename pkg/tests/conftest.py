import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def texture(rng, h=64, w=64):
    """Multi-scale noise image in [0, 255]; rich enough for matching tests."""
    from pyraffine.pipeline import make_texture_image

    return make_texture_image(rng, h, w)


def random_affine_params(rng, n=1, spread=0.3):
    """(n, 6) parameter rows near the identity."""
    base = np.tile(np.array([1.0, 0, 0, 0, 1.0, 0]), (n, 1))
    base += rng.normal(scale=spread, size=(n, 6))
    return base if n > 1 else base[0]
