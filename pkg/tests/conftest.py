import os

import numpy as np
import pytest

SCENARIO_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "scenarios")


def scenario_path(name: str) -> str:
    return os.path.join(SCENARIO_DIR, name)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_state(rng, rot_scale=1.5):
    """Random NavState with bounded rotation (keeps log well-conditioned)."""
    from polarfuse.geom import NavState, Pose3, so3_exp

    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, rot_scale)
    return NavState(
        pose=Pose3(so3_exp(axis * angle), rng.normal(0.0, 5.0, 3)),
        velocity=rng.normal(0.0, 2.0, 3),
        accel_bias=rng.normal(0.0, 0.05, 3),
        gyro_bias=rng.normal(0.0, 0.01, 3),
    )
