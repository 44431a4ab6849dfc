from typing import Optional

import numpy as np
import pytest

from dance_retarget.demo import DemoParams, generate_demo
from dance_retarget.model import Configuration, FootSpec, JointSpec, LinkSpec, RobotModel, default_model
from dance_retarget.motion import SupportLabel, default_skeleton_map
from dance_retarget.retarget import retarget_clip
from dance_retarget.spatial import Pose
from dance_retarget.trajectory import Trajectory


def random_configuration(model: RobotModel, rng: np.random.Generator) -> Configuration:
    rotation = rng.normal(size=4)
    joints = rng.uniform(model.lower, model.upper)
    return Configuration(Pose(rotation / np.linalg.norm(rotation), rng.normal(size=3)), joints)


def random_velocity(model: RobotModel, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    return scale * rng.normal(size=model.nv)


def build_two_leg_model() -> RobotModel:
    """A base with one single-joint leg per side; small enough to check by hand."""
    sole = [[0.05, 0.03, -0.5], [0.05, -0.03, -0.5], [-0.05, 0.03, -0.5], [-0.05, -0.03, -0.5]]
    links = [
        LinkSpec("base", 10.0, [0.0, 0.0, 0.0], np.diag([0.2, 0.2, 0.1])),
        LinkSpec("left_leg", 2.0, [0.0, 0.0, -0.25], np.diag([0.05, 0.05, 0.01])),
        LinkSpec("right_leg", 2.0, [0.0, 0.0, -0.25], np.diag([0.05, 0.05, 0.01])),
    ]
    joints = [
        JointSpec("left_hip", "base", "left_leg", [0.0, 1.0, 0.0], -1.0, 1.0, 10.0, 100.0,
                  Pose(translation=[0.0, 0.1, 0.0]), 0.01),
        JointSpec("right_hip", "base", "right_leg", [0.0, 1.0, 0.0], -1.0, 1.0, 10.0, 100.0,
                  Pose(translation=[0.0, -0.1, 0.0]), 0.01),
    ]
    feet = {"left": FootSpec("left_leg", sole), "right": FootSpec("right_leg", sole)}
    nominal = Configuration(Pose(translation=[0.0, 0.0, 0.5]), np.zeros(2))
    return RobotModel("two-leg", links, joints, feet, nominal=nominal)


@pytest.fixture(scope="session")
def model():
    return default_model()


@pytest.fixture(scope="session")
def two_leg_model():
    return build_two_leg_model()


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture(scope="session")
def short_demo():
    """One stride, with short lead-in and lead-out standing."""
    return generate_demo(DemoParams(n_strides=1, lead_time=0.3))


@pytest.fixture(scope="session")
def standing_demo():
    return generate_demo(DemoParams(n_strides=1, stride_length=0.0, step_height=0.0, arm_swing=0.0, sway=0.0))


def standing_trajectory(
    model: RobotModel, duration: float = 0.4, dt: float = 0.02, q: Optional[Configuration] = None
) -> Trajectory:
    """A stance (the nominal one by default) held still, all nodes in double support."""
    n = int(round(duration / dt)) + 1
    q = model.nominal_configuration() if q is None else q
    return Trajectory.from_configurations(
        dt,
        [joint.name for joint in model.joints],
        [q] * n,
        np.zeros((n, model.nv)),
        labels=[SupportLabel.DOUBLE] * n,
    )


@pytest.fixture(scope="session")
def standing(model):
    return standing_trajectory(model)


@pytest.fixture(scope="session")
def geometric(model, short_demo):
    clip, schedule = short_demo
    return retarget_clip(model, clip, default_skeleton_map(), schedule=schedule)
