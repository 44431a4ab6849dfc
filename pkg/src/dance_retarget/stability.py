"""ZMP, support polygons and stability margins on flat ground (z = 0)."""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.spatial import ConvexHull, QhullError

from dance_retarget.dynamics import GRAVITY
from dance_retarget.errors import NumericalError, ScheduleError
from dance_retarget.kinematics import centroidal_momentum_matrix, compute_kinematics
from dance_retarget.model import SIDES, RobotModel
from dance_retarget.motion import SupportLabel
from dance_retarget.spatial import Pose
from dance_retarget.trajectory import Trajectory

logger = logging.getLogger(__name__)

MIN_VERTICAL_FORCE = 1.0


@dataclass(frozen=True)
class ZmpPoint:
    x: float
    y: float
    valid: bool = True

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class SupportPolygon:
    vertices: np.ndarray  # (n, 2), counter-clockwise
    sides: tuple = ()

    @property
    def area(self) -> float:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

    def edges(self):
        return self.vertices, np.roll(self.vertices, -1, axis=0)

    def contains(self, point: np.ndarray, tolerance: float = 0.0) -> bool:
        start, end = self.edges()
        edge = end - start
        offset = np.asarray(point, dtype=float) - start
        return bool(np.all(edge[:, 0] * offset[:, 1] - edge[:, 1] * offset[:, 0] >= -tolerance))


def compute_zmp(
    points: Sequence[Sequence[float]], forces: Sequence[Sequence[float]], threshold: float = MIN_VERTICAL_FORCE
) -> ZmpPoint:
    """
    Zero-moment point on the ground plane of a set of point forces.

    The point is flagged invalid when the total vertical force is below ``threshold``.

    Raises:
        ValueError: If no force is given
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    forces = np.asarray(forces, dtype=float).reshape(-1, 3)
    if len(forces) == 0:
        raise ValueError("at least one force is required")
    vertical = forces[:, 2].sum()
    if vertical < threshold:
        return ZmpPoint(np.nan, np.nan, valid=False)
    x = (points[:, 0] @ forces[:, 2] - points[:, 2] @ forces[:, 0]) / vertical
    y = (points[:, 1] @ forces[:, 2] - points[:, 2] @ forces[:, 1]) / vertical
    return ZmpPoint(float(x), float(y))


def zmp_from_momentum(
    com: np.ndarray,
    com_acceleration: np.ndarray,
    angular_momentum_rate: np.ndarray,
    mass: float,
    gravity: np.ndarray = GRAVITY,
    threshold: float = MIN_VERTICAL_FORCE,
) -> ZmpPoint:
    """ZMP implied by the centroidal dynamics, for trajectories that carry no contact forces."""
    force = mass * (np.asarray(com_acceleration, dtype=float) - gravity)
    if force[2] < threshold:
        return ZmpPoint(np.nan, np.nan, valid=False)
    rate = np.asarray(angular_momentum_rate, dtype=float)
    x = com[0] - (rate[1] + com[2] * force[0]) / force[2]
    y = com[1] + (rate[0] - com[2] * force[1]) / force[2]
    return ZmpPoint(float(x), float(y))


def support_polygon(
    label: Union[SupportLabel, Iterable[str]],
    foot_poses: Dict[str, Pose],
    soles: Dict[str, np.ndarray],
) -> SupportPolygon:
    """
    Convex hull of the active soles projected onto the ground.

    Args:
        label: Support label or the list of sides in contact
        foot_poses: World pose of each foot frame
        soles: Sole vertices of each foot in its own frame

    Raises:
        ScheduleError: If no foot is in contact
    """
    sides = label.sides if isinstance(label, SupportLabel) else tuple(label)
    sides = tuple(side for side in sides if side in foot_poses)
    if not sides:
        raise ScheduleError("no active contact for the support polygon")
    points = np.vstack(
        [np.array([foot_poses[side].act(vertex) for vertex in soles[side]])[:, 0:2] for side in sides]
    )
    try:
        hull = ConvexHull(points)
    except QhullError as exc:
        raise NumericalError(f"degenerate support polygon: {exc}") from exc
    return SupportPolygon(points[hull.vertices], sides)


def stability_margin(zmp: ZmpPoint, polygon: SupportPolygon) -> float:
    """
    Signed distance from the ZMP to the polygon boundary, positive inside.

    Raises:
        ValueError: If the ZMP is invalid
    """
    if not zmp.valid:
        raise ValueError("invalid zmp has no stability margin")
    point = zmp.xy
    start, end = polygon.edges()
    edge = end - start
    length2 = np.einsum("ij,ij->i", edge, edge)
    t = np.clip(np.einsum("ij,ij->i", point - start, edge) / length2, 0.0, 1.0)
    distance = float(np.min(np.linalg.norm(start + t[:, None] * edge - point, axis=1)))
    return distance if polygon.contains(point) else -distance


def model_soles(model: RobotModel) -> Dict[str, np.ndarray]:
    return {side: model.feet[side].vertices for side in SIDES}


@dataclass
class StabilityReport:
    """
    Attributes:
        series: One row per node (time, label, ZMP, margin, momentum, per-foot vertical force)
        polygons: Support polygon per node
    """

    min_margin: float
    min_margin_time: float
    mean_swing_speed: float
    mean_com_speed: float
    max_angular_momentum: float
    max_linear_momentum: float
    knee_torque_peaks: Dict[str, float]
    zmp_source: str
    series: pd.DataFrame
    polygons: List[SupportPolygon] = field(default_factory=list)

    def summary(self) -> Dict[str, object]:
        return {
            "min_margin": self.min_margin,
            "min_margin_time": self.min_margin_time,
            "mean_swing_speed": self.mean_swing_speed,
            "mean_com_speed": self.mean_com_speed,
            "max_angular_momentum": self.max_angular_momentum,
            "max_linear_momentum": self.max_linear_momentum,
            "knee_torque_peaks": self.knee_torque_peaks,
            "zmp_source": self.zmp_source,
            "n_nodes": int(len(self.series)),
            "invalid_zmp_nodes": int((~self.series["zmp_valid"]).sum()),
        }


def _knee_torques(model: RobotModel, data, points: np.ndarray, forces: np.ndarray, sides: Sequence[str]) -> Dict[str, float]:
    torques = {}
    for side in SIDES:
        mine = np.array([s == side for s in sides])
        knee = model.joint_index.get(f"{side}_knee")
        if knee is None or not mine.any():
            continue
        links = np.full(mine.sum(), model.foot_link_index(side))
        jacobians = data.points_jacobian(links, points[mine])
        torques[side] = float(-np.einsum("ni,ni->", jacobians[:, :, 6 + knee], forces[mine]))
    return torques


def analyze_trajectory(model: RobotModel, trajectory: Trajectory) -> StabilityReport:
    """
    Stability and momentum report of a trajectory.

    The ZMP comes from the contact forces when the trajectory carries them,
    otherwise from finite differences of its centroidal momentum.

    Raises:
        ScheduleError: If the trajectory has no support labels
    """
    if trajectory.labels is None:
        raise ScheduleError("trajectory has no support labels")
    trajectory.check_model(model)
    dt, n = trajectory.dt, trajectory.n_nodes
    soles = model_soles(model)
    feet = {side: model.foot_link_index(side) for side in SIDES}
    sides = trajectory.diagnostics.get("contact_sides")
    with_forces = trajectory.forces is not None and trajectory.contact_points is not None and sides is not None

    coms, momenta, foot_positions, polygons = [], [], {side: [] for side in SIDES}, []
    knee_peaks = {side: 0.0 for side in SIDES}
    for k, q in enumerate(trajectory.configurations()):
        data = compute_kinematics(model, q)
        coms.append(model.masses @ data.coms / model.total_mass)
        momenta.append(centroidal_momentum_matrix(model, q, data) @ trajectory.velocities[k])
        poses = {}
        for side, link in feet.items():
            foot_positions[side].append(data.positions[link])
            poses[side] = Pose.from_rotation_matrix(data.rotations[link], data.positions[link])
        polygons.append(support_polygon(trajectory.labels[k], poses, soles))
        if with_forces:
            for side, torque in _knee_torques(model, data, trajectory.contact_points[k], trajectory.forces[k], sides).items():
                knee_peaks[side] = max(knee_peaks[side], abs(torque))
    coms = np.array(coms)
    momenta = np.array(momenta)
    com_velocity = np.gradient(coms, dt, axis=0) if n > 1 else np.zeros_like(coms)

    zmps = []
    if with_forces:
        source = "forces"
        zmps = [compute_zmp(trajectory.contact_points[k], trajectory.forces[k]) for k in range(n)]
    else:
        source = "momentum"
        com_acceleration = np.gradient(com_velocity, dt, axis=0) if n > 1 else np.zeros_like(coms)
        rate = np.gradient(momenta[:, 3:6], dt, axis=0) if n > 1 else np.zeros((n, 3))
        zmps = [zmp_from_momentum(coms[k], com_acceleration[k], rate[k], model.total_mass) for k in range(n)]
    margins = margin_series(zmps, polygons)

    swing_speeds = []
    for column, side in enumerate(SIDES):
        positions = np.array(foot_positions[side])
        speed = np.linalg.norm(np.gradient(positions, dt, axis=0), axis=1) if n > 1 else np.zeros(n)
        swing = np.array([not label.in_contact(side) for label in trajectory.labels])
        swing_speeds.extend(speed[swing])

    series = pd.DataFrame(
        {
            "time": trajectory.times,
            "label": [label.value for label in trajectory.labels],
            "zmp_x": [zmp.x for zmp in zmps],
            "zmp_y": [zmp.y for zmp in zmps],
            "zmp_valid": [zmp.valid for zmp in zmps],
            "margin": margins,
            "com_x": coms[:, 0],
            "com_y": coms[:, 1],
            "com_z": coms[:, 2],
            "linear_momentum": np.linalg.norm(momenta[:, 0:3], axis=1),
            "angular_momentum": np.linalg.norm(momenta[:, 3:6], axis=1),
        }
    )
    for side in SIDES:
        if with_forces:
            mine = np.array([s == side for s in sides])
            series[f"f_{side}"] = trajectory.forces[:, mine, 2].sum(axis=1)
        series[f"{side}_foot_z"] = np.array(foot_positions[side])[:, 2]

    valid = np.isfinite(margins)
    worst = int(np.nanargmin(margins)) if valid.any() else 0
    report = StabilityReport(
        min_margin=float(margins[worst]) if valid.any() else float("nan"),
        min_margin_time=float(trajectory.times[worst]),
        mean_swing_speed=float(np.mean(swing_speeds)) if swing_speeds else 0.0,
        mean_com_speed=float(np.mean(np.linalg.norm(com_velocity, axis=1))),
        max_angular_momentum=float(series["angular_momentum"].max()),
        max_linear_momentum=float(series["linear_momentum"].max()),
        knee_torque_peaks=knee_peaks if with_forces else {},
        zmp_source=source,
        series=series,
        polygons=polygons,
    )
    logger.info(
        "stability (%s ZMP): min margin %.4f m at %.2f s, mean swing speed %.3f m/s",
        source, report.min_margin, report.min_margin_time, report.mean_swing_speed,
    )
    return report


def margin_series(zmps: Sequence[ZmpPoint], polygons: Sequence[SupportPolygon]) -> np.ndarray:
    return np.array([stability_margin(z, p) if z.valid else np.nan for z, p in zip(zmps, polygons)])


def polygon_for_points(points: np.ndarray) -> Optional[SupportPolygon]:
    """Hull of ground-projected contact points, None when they do not span an area."""
    points = np.asarray(points, dtype=float)[:, 0:2]
    if len(points) < 3:
        return None
    try:
        hull = ConvexHull(points)
    except QhullError:
        return None
    return SupportPolygon(points[hull.vertices])
