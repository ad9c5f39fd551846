import numpy as np
import pytest

from icount.density import DotScene, render_density


def blob_grid(h, w, centers, sigma=2.0):
    """Render unit-mass blobs directly at the given (x, y) centres."""
    scene = DotScene(height=h, width=w, sigma=sigma, dots=tuple(centers))
    return render_density(scene)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
