import numpy as np
import pytest

from xmplace import CameraModel


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cam():
    return CameraModel(fx=50.0, fy=50.0, cx=32.0, cy=16.0, width=64, height=32)


def random_camera(rng) -> CameraModel:
    """A camera with random intrinsics and a random proper rotation."""
    fx = float(rng.uniform(30, 400))
    fy = float(rng.uniform(30, 400))
    w = int(rng.integers(16, 200))
    h = int(rng.integers(16, 120))
    # QR of a random matrix gives an orthonormal Q; fix the sign to det +1
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    t = rng.normal(scale=2.0, size=3)
    return CameraModel(fx=fx, fy=fy, cx=w / 2.0, cy=h / 2.0, width=w, height=h, R=q, t=t)
