"""
Floating-base robot description.

A ``RobotModel`` is an immutable tree of links connected by revolute joints.
Links are stored in topological order with the floating base at index 0;
joint ``j`` always moves link ``j + 1``. Besides links, a model may declare
fixed operational frames (hands, head) attached to a link, and one contact
vertex set per foot.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from dance_retarget.artifacts import make_header, read_json, require, write_json
from dance_retarget.errors import FormatError, ModelError, UnknownFrameError
from dance_retarget.spatial import Pose, Twist

logger = logging.getLogger(__name__)

SIDES = ("left", "right")


@dataclass(frozen=True)
class LinkSpec:
    name: str
    mass: float
    com: np.ndarray = field(default_factory=lambda: np.zeros(3))
    inertia: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))

    def __post_init__(self):
        com = np.asarray(self.com, dtype=float).reshape(3)
        inertia = np.asarray(self.inertia, dtype=float).reshape(3, 3)
        if not np.isfinite(self.mass) or self.mass < 0.0:
            raise ModelError(f"link '{self.name}': mass must be finite and >= 0")
        if not np.allclose(inertia, inertia.T, atol=1e-12):
            raise ModelError(f"link '{self.name}': inertia must be symmetric")
        moments = np.linalg.eigvalsh(inertia)
        if moments[0] < -1e-12:
            raise ModelError(f"link '{self.name}': inertia must be positive semidefinite")
        total = moments.sum()
        if np.any(moments > total - moments + 1e-9):
            raise ModelError(
                f"link '{self.name}': principal moments violate the triangle inequality"
            )
        object.__setattr__(self, "com", com)
        object.__setattr__(self, "inertia", inertia)


@dataclass(frozen=True)
class JointSpec:
    """A revolute joint; ``origin`` places the joint frame in the parent link frame."""

    name: str
    parent: str
    child: str
    axis: np.ndarray
    lower: float
    upper: float
    velocity_limit: float
    torque_limit: float
    origin: Pose = field(default_factory=Pose.identity)
    armature: float = 0.0

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float).reshape(3)
        norm = float(np.linalg.norm(axis))
        if abs(norm - 1.0) > 1e-6:
            raise ModelError(f"joint '{self.name}': axis must be a unit vector")
        if not (np.isfinite(self.lower) and np.isfinite(self.upper)):
            raise ModelError(f"joint '{self.name}': position limits must be finite")
        if not self.lower < self.upper:
            raise ModelError(f"joint '{self.name}': lower limit must be below upper limit")
        if not (self.velocity_limit > 0.0 and self.torque_limit > 0.0):
            raise ModelError(f"joint '{self.name}': velocity and torque limits must be positive")
        if self.armature < 0.0:
            raise ModelError(f"joint '{self.name}': armature must be >= 0")
        object.__setattr__(self, "axis", axis / norm)


@dataclass(frozen=True)
class Configuration:
    """Base pose in the world plus joint positions (rad)."""

    base: Pose
    joints: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "joints", np.asarray(self.joints, dtype=float).reshape(-1))

    def copy(self) -> "Configuration":
        return Configuration(self.base, self.joints.copy())


@dataclass(frozen=True)
class GeneralizedVelocity:
    """Base twist expressed in the base frame plus joint velocities (rad/s)."""

    base: Twist
    joints: np.ndarray

    @classmethod
    def from_vector(cls, vector: Sequence[float]) -> "GeneralizedVelocity":
        vector = np.asarray(vector, dtype=float)
        return cls(Twist.from_vector(vector[:6]), vector[6:].copy())

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.base.vector, self.joints])


@dataclass(frozen=True)
class FootSpec:
    link: str
    vertices: np.ndarray

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        if len(vertices) < 1:
            raise ModelError(f"foot '{self.link}' needs at least one contact vertex")
        object.__setattr__(self, "vertices", vertices)


class RobotModel:
    """
    Immutable kinematic/dynamic tree with a floating base.

    Args:
        name: Model name
        links: Link descriptions; the first one is the floating base
        joints: One revolute joint per non-root link
        feet: Contact geometry keyed by side ("left", "right")
        frames: Extra fixed frames, name -> (link name, offset pose)
        nominal: Nominal standing configuration in sorted joint order; defaults to
            zero joints clamped into limits

    Raises:
        ModelError: If the tree is disconnected, cyclic or inconsistent
    """

    def __init__(
        self,
        name: str,
        links: Sequence[LinkSpec],
        joints: Sequence[JointSpec],
        feet: Dict[str, FootSpec],
        frames: Optional[Dict[str, Tuple[str, Pose]]] = None,
        nominal: Optional[Configuration] = None,
    ):
        if not links:
            raise ModelError("model has no links")
        self.name = name
        self.links, self.joints = self._sort_tree(list(links), list(joints))
        self.link_index = {link.name: index for index, link in enumerate(self.links)}
        self.joint_index = {joint.name: index for index, joint in enumerate(self.joints)}

        missing = [side for side in SIDES if side not in feet]
        if missing:
            raise ModelError(f"model must declare feet {list(SIDES)}, missing {missing}")
        for side in SIDES:
            if feet[side].link not in self.link_index:
                raise ModelError(f"foot link '{feet[side].link}' is not a model link")
        self.feet = {side: feet[side] for side in SIDES}

        self.frames: Dict[str, Tuple[int, Pose]] = {
            link.name: (index, Pose.identity()) for index, link in enumerate(self.links)
        }
        for frame_name, (link_name, offset) in (frames or {}).items():
            if link_name not in self.link_index:
                raise ModelError(f"frame '{frame_name}' is attached to unknown link '{link_name}'")
            if frame_name in self.frames:
                raise ModelError(f"frame '{frame_name}' duplicates a link name")
            self.frames[frame_name] = (self.link_index[link_name], offset)
        self.extra_frames = {
            name: (self.links[index].name, offset)
            for name, (index, offset) in self.frames.items()
            if name not in self.link_index
        }

        self.n_links = len(self.links)
        self.n_q = len(self.joints)
        self.nv = 6 + self.n_q
        self.masses = np.array([link.mass for link in self.links])
        self.total_mass = float(np.sum(self.masses))
        self.link_coms = np.array([link.com for link in self.links])
        self.link_inertias = np.array([link.inertia for link in self.links])
        self.joint_parents = np.array(
            [self.link_index[joint.parent] for joint in self.joints], dtype=int
        )
        self.joint_axes = np.array([joint.axis for joint in self.joints]).reshape(-1, 3)
        self.origin_rotations = np.array(
            [joint.origin.rotation_matrix for joint in self.joints]
        ).reshape(-1, 3, 3)
        self.origin_translations = np.array(
            [joint.origin.translation for joint in self.joints]
        ).reshape(-1, 3)
        self.lower = np.array([joint.lower for joint in self.joints])
        self.upper = np.array([joint.upper for joint in self.joints])
        self.velocity_limits = np.array([joint.velocity_limit for joint in self.joints])
        self.torque_limits = np.array([joint.torque_limit for joint in self.joints])
        self.armature = np.array([joint.armature for joint in self.joints])

        # support[l, j] is True when joint j lies on the path root -> link l
        self.support = np.zeros((self.n_links, self.n_q), dtype=bool)
        for j, parent in enumerate(self.joint_parents):
            self.support[j + 1] = self.support[parent]
            self.support[j + 1, j] = True

        self.leg_joints = {
            side: np.flatnonzero(self.support[self.link_index[self.feet[side].link]])
            for side in SIDES
        }
        self.arm_joints = np.flatnonzero(
            ~(self.support[self.link_index[self.feet["left"].link]]
              | self.support[self.link_index[self.feet["right"].link]])
        )

        if nominal is None:
            nominal = Configuration(
                Pose.identity(), np.clip(np.zeros(self.n_q), self.lower, self.upper)
            )
        if nominal.joints.shape != (self.n_q,):
            raise ModelError(
                f"nominal configuration has {nominal.joints.size} joints, model has {self.n_q}"
            )
        self.nominal = nominal
        logger.debug(
            "model '%s': %d links, %d joints, mass %.3f kg",
            name, self.n_links, self.n_q, self.total_mass,
        )

    @staticmethod
    def _sort_tree(
        links: List[LinkSpec], joints: List[JointSpec]
    ) -> Tuple[List[LinkSpec], List[JointSpec]]:
        by_name = {link.name: link for link in links}
        if len(by_name) != len(links):
            raise ModelError("duplicate link names")
        if len({joint.name for joint in joints}) != len(joints):
            raise ModelError("duplicate joint names")
        if len(joints) != len(links) - 1:
            raise ModelError(
                f"a tree of {len(links)} links needs {len(links) - 1} joints, got {len(joints)}"
            )
        children: Dict[str, List[JointSpec]] = {link.name: [] for link in links}
        child_joint: Dict[str, JointSpec] = {}
        for joint in joints:
            for end in (joint.parent, joint.child):
                if end not in by_name:
                    raise ModelError(f"joint '{joint.name}' references unknown link '{end}'")
            if joint.child in child_joint:
                raise ModelError(f"link '{joint.child}' has more than one parent joint")
            child_joint[joint.child] = joint
            children[joint.parent].append(joint)

        root = links[0]
        if root.name in child_joint:
            raise ModelError(f"root link '{root.name}' cannot be the child of a joint")

        # depth-first preorder keeps an already topological listing unchanged
        ordered_links = [root]
        ordered_joints: List[JointSpec] = []
        stack = list(reversed(children[root.name]))
        while stack:
            joint = stack.pop()
            ordered_joints.append(joint)
            ordered_links.append(by_name[joint.child])
            stack.extend(reversed(children[joint.child]))
        if len(ordered_links) != len(links):
            unreachable = sorted(set(by_name) - {link.name for link in ordered_links})
            raise ModelError(f"links not connected to the root: {unreachable}")
        return ordered_links, ordered_joints

    def frame(self, name: str) -> Tuple[int, Pose]:
        """Return (link index, offset in link frame) for a link or operational frame."""
        try:
            return self.frames[name]
        except KeyError:
            raise UnknownFrameError(name) from None

    def foot_link_index(self, side: str) -> int:
        return self.link_index[self.feet[side].link]

    def check_configuration(self, q: Configuration) -> None:
        if q.joints.shape != (self.n_q,):
            raise ModelError(
                f"configuration has {q.joints.size} joint values, model '{self.name}' has {self.n_q}"
            )

    def check_velocity(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.shape != (self.nv,):
            raise ModelError(f"velocity has {v.size} entries, model '{self.name}' needs {self.nv}")
        return v

    def within_limits(self, q: Configuration, tolerance: float = 1e-9) -> bool:
        return bool(
            np.all(q.joints >= self.lower - tolerance) and np.all(q.joints <= self.upper + tolerance)
        )

    def nominal_configuration(self) -> Configuration:
        return self.nominal.copy()


def nominal_configuration(model: RobotModel) -> Configuration:
    return model.nominal_configuration()


def _pose_to_json(pose: Pose) -> Dict[str, list]:
    return {"translation": pose.translation.tolist(), "rotation": pose.rotation.tolist()}


def _pose_from_json(document: Dict[str, list]) -> Pose:
    return Pose(
        document.get("rotation", [0.0, 0.0, 0.0, 1.0]),
        document.get("translation", [0.0, 0.0, 0.0]),
    )


def model_to_json(model: RobotModel) -> Dict:
    return {
        "name": model.name,
        "links": [
            {
                "name": link.name,
                "mass": link.mass,
                "com": link.com.tolist(),
                "inertia": link.inertia.tolist(),
            }
            for link in model.links
        ],
        "joints": [
            {
                "name": joint.name,
                "parent": joint.parent,
                "child": joint.child,
                "axis": joint.axis.tolist(),
                "origin": _pose_to_json(joint.origin),
                "limits": {
                    "lower": joint.lower,
                    "upper": joint.upper,
                    "velocity": joint.velocity_limit,
                    "torque": joint.torque_limit,
                },
                "armature": joint.armature,
                "nominal": float(model.nominal.joints[index]),
            }
            for index, joint in enumerate(model.joints)
        ],
        "feet": {
            side: {"link": foot.link, "vertices": foot.vertices.tolist()}
            for side, foot in model.feet.items()
        },
        "frames": {
            name: {"link": link, "offset": _pose_to_json(offset)}
            for name, (link, offset) in model.extra_frames.items()
        },
        "nominal_base": _pose_to_json(model.nominal.base),
    }


def model_from_json(document: Dict, path: Union[str, Path] = "<memory>") -> RobotModel:
    """
    Build a model from its JSON document (see README for the schema).

    Raises:
        FormatError: If a field is missing or the model is inconsistent
    """
    try:
        links = [
            LinkSpec(
                name=require(item, "name", path),
                mass=float(require(item, "mass", path)),
                com=item.get("com", [0.0, 0.0, 0.0]),
                inertia=item.get("inertia", np.zeros((3, 3)).tolist()),
            )
            for item in require(document, "links", path)
        ]
        joint_items = require(document, "joints", path)
        joints = []
        for item in joint_items:
            limits = require(item, "limits", path)
            joints.append(
                JointSpec(
                    name=require(item, "name", path),
                    parent=require(item, "parent", path),
                    child=require(item, "child", path),
                    axis=require(item, "axis", path),
                    lower=float(require(limits, "lower", path)),
                    upper=float(require(limits, "upper", path)),
                    velocity_limit=float(require(limits, "velocity", path)),
                    torque_limit=float(require(limits, "torque", path)),
                    origin=_pose_from_json(item.get("origin", {})),
                    armature=float(item.get("armature", 0.0)),
                )
            )
        feet = {
            side: FootSpec(require(foot, "link", path), require(foot, "vertices", path))
            for side, foot in require(document, "feet", path).items()
        }
        frames = {
            name: (require(item, "link", path), _pose_from_json(item.get("offset", {})))
            for name, item in document.get("frames", {}).items()
        }
        _, ordered_joints = RobotModel._sort_tree(links, joints)
        nominal_by_joint = {item["name"]: float(item.get("nominal", 0.0)) for item in joint_items}
        nominal_joints = np.clip(
            [nominal_by_joint[joint.name] for joint in ordered_joints],
            [joint.lower for joint in ordered_joints],
            [joint.upper for joint in ordered_joints],
        )
        nominal_base = _pose_from_json(document.get("nominal_base", {}))
        return RobotModel(
            name=document.get("name", Path(str(path)).stem),
            links=links,
            joints=joints,
            feet=feet,
            frames=frames,
            nominal=Configuration(nominal_base, nominal_joints),
        )
    except ModelError as exc:
        raise FormatError(str(path), str(exc)) from exc
    except (TypeError, ValueError, AttributeError) as exc:
        raise FormatError(str(path), f"malformed model: {exc}") from exc


def load_model(path: Union[str, Path]) -> RobotModel:
    return model_from_json(read_json(path, kind="model"), path)


def save_model(model: RobotModel, path: Union[str, Path], header: Optional[Dict] = None) -> Path:
    document = {"header": header or make_header("model")}
    document.update(model_to_json(model))
    return write_json(path, document)


def _cylinder_inertia(mass: float, length: float, radius: float) -> np.ndarray:
    transverse = mass * (3.0 * radius**2 + length**2) / 12.0
    return np.diag([transverse, transverse, 0.5 * mass * radius**2])


def _box_inertia(mass: float, x: float, y: float, z: float) -> np.ndarray:
    return mass / 12.0 * np.diag([y**2 + z**2, x**2 + z**2, x**2 + y**2])


# Segment lengths of the default model (m)
HIP_OFFSET = np.array([0.0, 0.1, -0.08])
THIGH_LENGTH = 0.38
SHIN_LENGTH = 0.38
ANKLE_HEIGHT = 0.08
SHOULDER_OFFSET = np.array([0.0, 0.2, 0.45])
UPPER_ARM_LENGTH = 0.28
FOREARM_LENGTH = 0.26
HEAD_HEIGHT = 0.75
SOLE_HALF_LENGTH = 0.1
SOLE_HALF_WIDTH = 0.05
NOMINAL_CROUCH = 0.35


def nominal_pelvis_height(crouch: float = NOMINAL_CROUCH, scale: float = 1.0) -> float:
    """Pelvis height that puts flat soles on the ground for a symmetric crouch."""
    leg = (THIGH_LENGTH + SHIN_LENGTH) * np.cos(crouch) + ANKLE_HEIGHT
    return float(scale * (leg - HIP_OFFSET[2]))


def build_humanoid(name: str = "K18", scale: float = 1.0, arm_ratio: float = 1.0) -> RobotModel:
    """
    Humanoid with 6 DOF legs and 3 DOF arms; ``scale`` multiplies every length
    and ``arm_ratio`` additionally stretches the arm segments.

    The pelvis link carries the torso mass. Knee flexion is positive and the
    nominal stance is a symmetric crouch with flat feet.
    """
    if scale <= 0.0 or arm_ratio <= 0.0:
        raise ModelError("scale must be positive")
    links = [
        LinkSpec("pelvis", 23.0, [0.0, 0.0, 0.15 * scale],
                 _box_inertia(23.0, 0.3 * scale, 0.35 * scale, 0.6 * scale)),
    ]
    joints: List[JointSpec] = []
    nominal: List[float] = []
    thigh, shin = THIGH_LENGTH * scale, SHIN_LENGTH * scale
    upper_arm = UPPER_ARM_LENGTH * scale * arm_ratio
    forearm = FOREARM_LENGTH * scale * arm_ratio

    def add(joint, parent, child, axis, limits, velocity, torque, armature,
            mass, com, inertia, translation=(0.0, 0.0, 0.0), rest=0.0):
        links.append(LinkSpec(child, mass, com, inertia))
        joints.append(
            JointSpec(
                joint, parent, child, axis, limits[0], limits[1],
                velocity, torque, Pose(translation=translation), armature,
            )
        )
        nominal.append(rest)

    x, y, z = np.eye(3)
    small = np.diag([0.002, 0.002, 0.002])
    for side, sign in (("left", 1.0), ("right", -1.0)):
        hip = HIP_OFFSET * [1.0, sign, 1.0] * scale
        add(f"{side}_hip_yaw", "pelvis", f"{side}_hip_yaw_link", z, (-0.8, 0.8),
            12.0, 80.0, 0.1, 1.0, [0.0, 0.0, 0.0], small, hip)
        add(f"{side}_hip_roll", f"{side}_hip_yaw_link", f"{side}_hip_roll_link", x, (-0.6, 0.6),
            12.0, 120.0, 0.1, 1.5, [0.0, 0.0, 0.0], 1.5 * small)
        add(f"{side}_hip_pitch", f"{side}_hip_roll_link", f"{side}_thigh", y, (-2.0, 0.8),
            12.0, 150.0, 0.1, 4.5, [0.0, 0.0, -thigh / 2],
            _cylinder_inertia(4.5, thigh, 0.06 * scale), rest=-NOMINAL_CROUCH)
        add(f"{side}_knee", f"{side}_thigh", f"{side}_shin", y, (0.0, 2.3),
            12.0, 200.0, 0.1, 3.0, [0.0, 0.0, -shin / 2],
            _cylinder_inertia(3.0, shin, 0.06 * scale), (0.0, 0.0, -thigh),
            rest=2 * NOMINAL_CROUCH)
        add(f"{side}_ankle_pitch", f"{side}_shin", f"{side}_ankle_link", y, (-1.0, 0.8),
            12.0, 80.0, 0.1, 0.5, [0.0, 0.0, 0.0], 0.25 * small, (0.0, 0.0, -shin),
            rest=-NOMINAL_CROUCH)
        add(f"{side}_ankle_roll", f"{side}_ankle_link", f"{side}_foot", x, (-0.5, 0.5),
            12.0, 60.0, 0.1, 1.0, [0.0, 0.0, -0.05 * scale],
            _box_inertia(1.0, 0.2 * scale, 0.1 * scale, 0.06 * scale))

    for side, sign in (("left", 1.0), ("right", -1.0)):
        shoulder = SHOULDER_OFFSET * [1.0, sign, 1.0] * scale
        add(f"{side}_shoulder_pitch", "pelvis", f"{side}_shoulder_link", y, (-2.5, 2.5),
            10.0, 40.0, 0.05, 0.8, [0.0, 0.0, 0.0], np.diag([0.001, 0.001, 0.001]), shoulder)
        add(f"{side}_shoulder_roll", f"{side}_shoulder_link", f"{side}_upper_arm", x,
            (-0.3, 2.0) if sign > 0 else (-2.0, 0.3), 10.0, 40.0, 0.05, 2.0,
            [0.0, 0.0, -upper_arm / 2], _cylinder_inertia(2.0, upper_arm, 0.04 * scale),
            rest=0.1 * sign)
        add(f"{side}_elbow", f"{side}_upper_arm", f"{side}_forearm", y, (-2.3, 0.0),
            10.0, 40.0, 0.05, 1.7, [0.0, 0.0, -forearm / 2],
            _cylinder_inertia(1.7, forearm, 0.035 * scale), (0.0, 0.0, -upper_arm),
            rest=-0.3)

    sole = scale * np.array(
        [[sx * SOLE_HALF_LENGTH, sy * SOLE_HALF_WIDTH, -ANKLE_HEIGHT]
         for sx in (1.0, -1.0) for sy in (1.0, -1.0)]
    )
    feet = {side: FootSpec(f"{side}_foot", sole) for side in SIDES}
    frames = {
        "left_hand": ("left_forearm", Pose(translation=[0.0, 0.0, -forearm])),
        "right_hand": ("right_forearm", Pose(translation=[0.0, 0.0, -forearm])),
        "head": ("pelvis", Pose(translation=[0.0, 0.0, HEAD_HEIGHT * scale])),
    }
    base = Pose(translation=[0.0, 0.0, nominal_pelvis_height(scale=scale)])
    return RobotModel(name, links, joints, feet, frames, Configuration(base, np.array(nominal)))


def default_model() -> RobotModel:
    """The desk-scale "K18" humanoid: 18 actuated joints, 55 kg, 1.66 m."""
    return build_humanoid("K18")
