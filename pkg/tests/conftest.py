import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from resilimb.core import PinholeCamera
from resilimb.synth import SynthBodySpec, generate_body

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_rotation(rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_camera(rng, depth=4.0) -> PinholeCamera:
    """Camera looking roughly at the origin from ``depth`` metres."""
    f = rng.uniform(500, 1500)
    return PinholeCamera(f, f * rng.uniform(0.9, 1.1), rng.uniform(200, 400), rng.uniform(200, 400),
                         random_rotation(rng), [rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), depth])


@pytest.fixture
def axis_camera() -> PinholeCamera:
    return PinholeCamera(1000, 1000, 500, 500, np.eye(3), [0, 0, 2], 1000, 1000)


@pytest.fixture(scope="session")
def default_body():
    return generate_body(SynthBodySpec())
