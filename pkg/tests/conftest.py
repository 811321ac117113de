import numpy as np
import pytest

from normint.geometry import CameraIntrinsics, NormalMap
from normint.synth import SceneSpec, render_scene


@pytest.fixture(scope="session")
def bump_scene():
    """Default discontinuity scene: off-axis spherical bump on a plane."""
    return render_scene(SceneSpec("sphere_on_plane", 128, 128))


@pytest.fixture(scope="session")
def patch_scene_64():
    return render_scene(SceneSpec("sphere_patch", 64, 64))


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def random_normal_map(rng, height, width, mask_prob=1.0):
    """Unit normals with negative z (front-facing) and an optional mask."""
    n = rng.normal(size=(height, width, 3))
    n[..., 2] = -np.abs(n[..., 2]) - 0.5
    n /= np.linalg.norm(n, axis=2, keepdims=True)
    if mask_prob >= 1.0:
        mask = np.ones((height, width), dtype=bool)
    else:
        mask = rng.random((height, width)) < mask_prob
    n[~mask] = 0.0
    return NormalMap.create(n, mask)


@pytest.fixture()
def unit_camera():
    return CameraIntrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0)
