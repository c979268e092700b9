import numpy as np
import pytest

from segwild.types import Camera, GaussianScene


def random_unit_quaternions(rng, n):
    q = rng.standard_normal((n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def make_random_scene(rng, n, feature_dim=3, alpha_max=0.8, alpha_min=0.05,
                      z_range=(2.0, 5.0), xy_half=0.8, scale_range=(0.05, 0.3)):
    """Random Gaussians inside the default test camera's frustum."""
    z = rng.uniform(*z_range, n)
    xy = rng.uniform(-xy_half, xy_half, (n, 2)) * z[:, None] / z_range[1]
    return GaussianScene(
        positions=np.column_stack([xy, z]),
        rotations=random_unit_quaternions(rng, n),
        scales=rng.uniform(*scale_range, (n, 3)),
        opacities=rng.uniform(alpha_min, alpha_max, n),
        colors=rng.uniform(0.0, 1.0, (n, 3)),
        affinities=rng.standard_normal((n, feature_dim)),
    ).validate()


def make_test_camera(width=32, height=32, f=40.0):
    return Camera(fx=f, fy=f, cx=width / 2, cy=height / 2,
                  width=width, height=height, R=np.eye(3), t=np.zeros(3)).validate()


@pytest.fixture
def camera():
    return make_test_camera()


@pytest.fixture(scope="session")
def warm_kernels():
    """Compile the numba kernels once so timed tests measure steady state."""
    rng = np.random.default_rng(0)
    scene = make_random_scene(rng, 3)
    cam = make_test_camera()
    from segwild.render import build_plan, render_arrays, render_payload_grad
    plan = build_plan(scene, cam)
    render_arrays(plan, scene.colors, backend="numba")
    render_payload_grad(plan, np.ones((cam.height, cam.width, 3)), len(scene),
                        backend="numba")
    return True
