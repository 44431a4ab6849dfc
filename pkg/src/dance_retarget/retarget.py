"""
Geometric retargeting: per-frame weighted pose tracking solved as a small QP.

Each robot frame b_i is pulled towards its target t_i through the body twist
``e_i = log6(T_b^-1 T_t)``. One QP step per clip frame is taken from the
previous solution, and ``dq / dt`` is the commanded velocity.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from dance_retarget.errors import ConfigError, InfeasibleQpError, NumericalError
from dance_retarget.kinematics import compute_kinematics, frame_jacobian, integrate_configuration
from dance_retarget.model import Configuration, RobotModel
from dance_retarget.motion import ContactSchedule, MotionClip, SkeletonMap, resample_clip, scale_skeleton
from dance_retarget.qp import QpResult, solve_dense_qp
from dance_retarget.spatial import Pose, se3_log
from dance_retarget.trajectory import GEOMETRIC, Trajectory

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PoseTask:
    """
    Attributes:
        frame: Robot frame b_i
        target: World pose of the target frame t_i
        weights: Diagonal of the 6x6 weight block, ordered [linear; angular]
    """

    frame: str
    target: Pose
    weights: np.ndarray = field(default_factory=lambda: np.ones(6))

    def __post_init__(self):
        weights = np.broadcast_to(np.asarray(self.weights, dtype=float), (6,)).copy()
        if np.any(weights < 0.0) or not np.any(weights > 0.0):
            raise ValueError(f"task '{self.frame}' needs non-negative weights with one positive entry")
        object.__setattr__(self, "weights", weights)


@dataclass(frozen=True)
class RetargetConfig:
    """
    Attributes:
        dt: Time step between clip frames (s)
        clamp_limits: Keep joints inside their position limits
        max_step: Bound on every entry of dq per frame
        weight_overrides: Task weight per human link, replacing the map's weight
        initial_iterations: QP steps allowed to converge on the first frame
    """

    dt: float = 0.01
    clamp_limits: bool = True
    max_step: float = 0.2
    regularization: float = 1e-6
    weight_overrides: Dict[str, float] = field(default_factory=dict)
    initial_iterations: int = 100
    initial_tolerance: float = 1e-8

    def validate(self) -> None:
        if not self.dt > 0.0:
            raise ConfigError(f"retarget dt must be positive, got {self.dt}")
        if not self.max_step > 0.0:
            raise ConfigError(f"retarget max_step must be positive, got {self.max_step}")
        if self.regularization < 0.0:
            raise ConfigError("retarget regularization must be non-negative")


@dataclass
class RetargetStep:
    delta: np.ndarray
    qp: QpResult


def task_error(model: RobotModel, q: Configuration, task: PoseTask, data=None) -> np.ndarray:
    """Body twist [linear; angular] taking the robot frame onto the target."""
    data = data or compute_kinematics(model, q)
    _, rotation, position = data.frame_placement(task.frame)
    current = Pose.from_rotation_matrix(rotation, position)
    return se3_log(current.inverse() * task.target).vector


def step_bounds(model: RobotModel, q: Configuration, config: RetargetConfig):
    lower = np.full(model.nv, -config.max_step)
    upper = np.full(model.nv, config.max_step)
    if config.clamp_limits:
        lower[6:] = np.maximum(lower[6:], model.lower - q.joints)
        upper[6:] = np.minimum(upper[6:], model.upper - q.joints)
    return lower, upper


def solve_frame_qp(
    model: RobotModel, q: Configuration, tasks: Sequence[PoseTask], config: RetargetConfig = RetargetConfig()
) -> RetargetStep:
    """
    One retargeting step: ``min sum |J_i dq - e_i|^2_W + reg |dq|^2`` inside the step box.

    Raises:
        ValueError: If no task is given
        InfeasibleQpError: If the joint-limit box and the step cap do not intersect
    """
    if not tasks:
        raise ValueError("at least one pose task is required")
    data = compute_kinematics(model, q)
    hessian = config.regularization * np.eye(model.nv)
    gradient = np.zeros(model.nv)
    for task in tasks:
        jacobian = frame_jacobian(model, q, task.frame, data=data)
        error = task_error(model, q, task, data)
        weighted = jacobian.T * task.weights
        hessian += weighted @ jacobian
        gradient -= weighted @ error
    lower, upper = step_bounds(model, q, config)
    if np.any(lower > upper):
        joint = int(np.argmax(lower > upper))
        raise InfeasibleQpError(
            f"infeasible box at coordinate {joint}: [{lower[joint]:.4g}, {upper[joint]:.4g}]"
        )
    result = solve_dense_qp(0.5 * (hessian + hessian.T), gradient, lower=lower, upper=upper)
    return RetargetStep(result.x, result)


def tasks_for_frame(clip: MotionClip, skeleton_map: SkeletonMap, frame: int, overrides: Dict[str, float]) -> List[PoseTask]:
    return [
        PoseTask(item.robot, clip.pose(frame, item.human), np.full(6, overrides.get(item.human, item.weight)))
        for item in skeleton_map.correspondences
        if overrides.get(item.human, item.weight) > 0.0
    ]


def initial_configuration(model: RobotModel, clip: MotionClip, skeleton_map: SkeletonMap) -> Configuration:
    """Nominal stance with the root frame placed on the first root target."""
    nominal = model.nominal_configuration()
    root = next(item for item in skeleton_map.correspondences if item.human == skeleton_map.root)
    data = compute_kinematics(model, nominal)
    _, rotation, position = data.frame_placement(root.robot)
    root_from_base = Pose.from_rotation_matrix(rotation, position).inverse() * nominal.base
    return Configuration(clip.pose(0, root.human) * root_from_base, nominal.joints.copy())


def retarget_clip(
    model: RobotModel,
    clip: MotionClip,
    skeleton_map: SkeletonMap,
    config: RetargetConfig = RetargetConfig(),
    schedule: Optional[ContactSchedule] = None,
) -> Trajectory:
    """
    Retarget a demonstrator clip onto the robot frame by frame.

    The clip is resampled to ``1 / dt`` when needed and scaled with the
    skeleton map before tracking.

    Returns:
        A geometric trajectory with per-task position and rotation errors in
        ``residuals`` and per-task RMS position errors in ``diagnostics``

    Raises:
        ConfigError: If the configuration is invalid or the schedule does not match the clip
        NumericalError: If a frame's QP fails; the message carries the frame index
    """
    config.validate()
    rate = 1.0 / config.dt
    if abs(clip.rate - rate) > 1e-9:
        logger.info("resampling clip from %.3g Hz to %.3g Hz", clip.rate, rate)
        clip = resample_clip(clip, rate)
    if schedule is not None and len(schedule) != clip.n_frames:
        raise ConfigError(f"schedule has {len(schedule)} frames, clip has {clip.n_frames}")
    clip = scale_skeleton(clip, skeleton_map)

    q = initial_configuration(model, clip, skeleton_map)
    configurations, velocities = [], []
    position_errors: Dict[str, List[float]] = {}
    rotation_errors: Dict[str, List[float]] = {}
    iterations = 0
    for k in range(clip.n_frames):
        tasks = tasks_for_frame(clip, skeleton_map, k, config.weight_overrides)
        steps = config.initial_iterations if k == 0 else 1
        total = np.zeros(model.nv)
        try:
            for _ in range(steps):
                step = solve_frame_qp(model, q, tasks, config)
                q = integrate_configuration(q, step.delta, 1.0)
                iterations += 1
                if k == 0 and np.max(np.abs(step.delta)) < config.initial_tolerance:
                    break
                total = step.delta
        except NumericalError as exc:
            raise NumericalError(f"retargeting failed at frame {k}: {exc}") from exc
        configurations.append(q)
        velocities.append(np.zeros(model.nv) if k == 0 else total / config.dt)
        data = compute_kinematics(model, q)
        for task in tasks:
            error = task_error(model, q, task, data)
            position_errors.setdefault(task.frame, []).append(float(np.linalg.norm(error[0:3])))
            rotation_errors.setdefault(task.frame, []).append(float(np.linalg.norm(error[3:6])))

    residuals = {f"{frame}_position": np.array(values) for frame, values in position_errors.items()}
    residuals.update({f"{frame}_rotation": np.array(values) for frame, values in rotation_errors.items()})
    rms = {frame: float(np.sqrt(np.mean(np.square(values)))) for frame, values in position_errors.items()}
    logger.info(
        "retargeted %d frames (%d QP steps), worst RMS position error %.4f m at %s",
        clip.n_frames, iterations, max(rms.values()), max(rms, key=rms.get),
    )
    return Trajectory.from_configurations(
        config.dt,
        [joint.name for joint in model.joints],
        configurations,
        np.array(velocities),
        kind=GEOMETRIC,
        labels=list(schedule.labels) if schedule is not None else None,
        residuals=residuals,
        diagnostics={"rms_position": rms, "qp_steps": iterations},
    )


def rms_by_group(trajectory: Trajectory, frames: Sequence[str]) -> float:
    """RMS position error over the listed task frames."""
    values = np.concatenate([trajectory.residuals[f"{frame}_position"] for frame in frames])
    return float(np.sqrt(np.mean(np.square(values))))
