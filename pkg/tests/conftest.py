import numpy as np
import pytest

from gaga import head_model as hm
from gaga.camera import orbit_camera
from gaga.lifting import GaussianCloud
from gaga.rasterizer import RenderSettings, render, render_backward


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    """Compile the jit kernels once up front so timed tests measure steady
    state, not compilation."""
    cloud = random_cloud(np.random.default_rng(0), 4, k=2)
    cam = orbit_camera(0.0, 0.0, 2.6, 35.0, 16)
    fb = render(cloud, cam, RenderSettings())
    render_backward(cloud, cam, RenderSettings(),
                    np.ones_like(fb.channels), np.zeros_like(fb.alpha))


def random_cloud(rng, n, k=3, center=(0.0, 0.0, 0.0), spread=0.35,
                 scale_range=(0.02, 0.12), opacity_range=(0.25, 0.9)) -> GaussianCloud:
    """Well-conditioned random scene near the origin (inside orbit cameras)."""
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return GaussianCloud(
        positions=np.asarray(center) + rng.uniform(-spread, spread, size=(n, 3)),
        rotations=q,
        scales=np.exp(rng.uniform(np.log(scale_range[0]), np.log(scale_range[1]), size=(n, 3))),
        opacities=rng.uniform(*opacity_range, size=n),
        features=rng.uniform(0.0, 1.0, size=(n, k)),
    )


@pytest.fixture(scope="session")
def toy_model():
    return hm.generate_toy_model(seed=7, num_vertices=128)


@pytest.fixture
def cam64():
    return orbit_camera(0.0, 0.0, 2.6, 35.0, 64)


@pytest.fixture
def cam32():
    return orbit_camera(5.0, -3.0, 2.6, 35.0, 32)
