"""Whole-body trajectory container shared by the retargeting, optimisation and analysis stages."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from dance_retarget.artifacts import make_header, read_json, require, write_json
from dance_retarget.errors import FormatError, ModelError
from dance_retarget.model import Configuration, RobotModel
from dance_retarget.motion import SupportLabel
from dance_retarget.spatial import Pose

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

GEOMETRIC = "geometric"
DYNAMIC = "dynamic"


@dataclass
class Trajectory:
    """
    Configurations and generalized velocities sampled every ``dt`` seconds.

    Attributes:
        kind: "geometric" (kinematic retargeting output) or "dynamic" (optimised)
        base_translations: (n, 3) base positions
        base_rotations: (n, 4) base quaternions, xyzw
        joints: (n, n_q) joint positions
        velocities: (n, nv) generalized velocities, base twist in the base frame
        labels: Support label per node
        forces: (n, n_contacts, 3) world contact forces (optimised trajectories only)
        contact_points: (n, n_contacts, 3) world contact positions matching ``forces``
        com_velocity: (n, 3) CoM velocity carried by the optimiser state
        angular_momentum: (n, 3) angular momentum about the CoM
        residuals: Per-node diagnostics, e.g. task errors or dynamics defects
    """

    dt: float
    joint_names: List[str]
    base_translations: np.ndarray
    base_rotations: np.ndarray
    joints: np.ndarray
    velocities: np.ndarray
    kind: str = GEOMETRIC
    labels: Optional[List[SupportLabel]] = None
    forces: Optional[np.ndarray] = None
    contact_points: Optional[np.ndarray] = None
    com_velocity: Optional[np.ndarray] = None
    angular_momentum: Optional[np.ndarray] = None
    residuals: Dict[str, np.ndarray] = field(default_factory=dict)
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        n = len(self.joints)
        if n == 0:
            raise ValueError("empty trajectory")
        for name in ("base_translations", "base_rotations", "velocities"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has {len(getattr(self, name))} nodes, expected {n}")
        if self.labels is not None and len(self.labels) != n:
            raise ValueError(f"labels have {len(self.labels)} nodes, expected {n}")

    @classmethod
    def from_configurations(
        cls,
        dt: float,
        joint_names: List[str],
        configurations: List[Configuration],
        velocities: np.ndarray,
        **extra,
    ) -> "Trajectory":
        return cls(
            dt=dt,
            joint_names=list(joint_names),
            base_translations=np.array([q.base.translation for q in configurations]),
            base_rotations=np.array([q.base.rotation for q in configurations]),
            joints=np.array([q.joints for q in configurations]),
            velocities=np.asarray(velocities, dtype=float),
            **extra,
        )

    @property
    def n_nodes(self) -> int:
        return len(self.joints)

    @property
    def duration(self) -> float:
        return (self.n_nodes - 1) * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_nodes) * self.dt

    def configuration(self, node: int) -> Configuration:
        return Configuration(
            Pose(self.base_rotations[node], self.base_translations[node]), self.joints[node].copy()
        )

    def configurations(self) -> List[Configuration]:
        return [self.configuration(node) for node in range(self.n_nodes)]

    def check_model(self, model: RobotModel) -> None:
        if self.joints.shape[1] != model.n_q:
            raise ModelError(
                f"trajectory has {self.joints.shape[1]} joints, model '{model.name}' has {model.n_q}"
            )
        if list(self.joint_names) != [joint.name for joint in model.joints]:
            raise ModelError(f"trajectory joint names do not match model '{model.name}'")


def trajectory_to_json(trajectory: Trajectory, header: Optional[Dict] = None) -> Dict:
    document: Dict[str, Any] = {
        "header": header or make_header("trajectory"),
        "kind": trajectory.kind,
        "dt": trajectory.dt,
        "joint_names": list(trajectory.joint_names),
        "base_translation": trajectory.base_translations.tolist(),
        "base_rotation": trajectory.base_rotations.tolist(),
        "joints": trajectory.joints.tolist(),
        "v": trajectory.velocities.tolist(),
        "timestamps": trajectory.times.tolist(),
    }
    if trajectory.labels is not None:
        document["labels"] = [label.value for label in trajectory.labels]
    for key, value in (
        ("forces", trajectory.forces),
        ("contact_points", trajectory.contact_points),
        ("com_velocity", trajectory.com_velocity),
        ("angular_momentum", trajectory.angular_momentum),
    ):
        if value is not None:
            document[key] = np.asarray(value).tolist()
    document["residuals"] = {key: np.asarray(value).tolist() for key, value in trajectory.residuals.items()}
    document["diagnostics"] = trajectory.diagnostics
    return document


def trajectory_from_json(document: Dict, path: PathLike = "<memory>") -> Trajectory:
    def array(field_name: str, optional: bool = False) -> Optional[np.ndarray]:
        if optional and field_name not in document:
            return None
        try:
            return np.asarray(require(document, field_name, path), dtype=float)
        except (TypeError, ValueError) as exc:
            raise FormatError(str(path), f"field '{field_name}' is not numeric: {exc}") from exc

    labels = None
    if "labels" in document:
        try:
            labels = [SupportLabel(value) for value in document["labels"]]
        except ValueError as exc:
            raise FormatError(str(path), f"field 'labels': {exc}") from exc
    try:
        return Trajectory(
            dt=float(require(document, "dt", path)),
            joint_names=list(require(document, "joint_names", path)),
            base_translations=array("base_translation"),
            base_rotations=array("base_rotation"),
            joints=array("joints").reshape(len(document["joints"]), -1),
            velocities=array("v").reshape(len(document["v"]), -1),
            kind=document.get("kind", GEOMETRIC),
            labels=labels,
            forces=array("forces", optional=True),
            contact_points=array("contact_points", optional=True),
            com_velocity=array("com_velocity", optional=True),
            angular_momentum=array("angular_momentum", optional=True),
            residuals={key: np.asarray(value, dtype=float) for key, value in document.get("residuals", {}).items()},
            diagnostics=document.get("diagnostics", {}),
        )
    except ValueError as exc:
        raise FormatError(str(path), str(exc)) from exc


def load_trajectory(path: PathLike) -> Trajectory:
    return trajectory_from_json(read_json(path, "trajectory"), path)


def save_trajectory(trajectory: Trajectory, path: PathLike, header: Optional[Dict] = None) -> Path:
    return write_json(path, trajectory_to_json(trajectory, header))
