"""
Motion clips, contact schedules and skeleton maps.

A clip is the post-solve output of a motion-capture session: per-frame world
poses of the demonstrator's links. The schedule labels every frame with the
support state. The skeleton map says which robot frame follows which
demonstrator link and how each limb is scaled.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from funcy import lpartition_by, pairwise
from scipy.spatial.transform import Rotation, Slerp

from dance_retarget.artifacts import make_header, read_json, require, write_json
from dance_retarget.errors import ConfigError, FormatError, ScheduleError
from dance_retarget.spatial import Pose

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CANONICAL_RATE = 100.0
DEFAULT_HEIGHT_TOLERANCE = 0.02
DEFAULT_VELOCITY_TOLERANCE = 0.05
DEFAULT_FEET = ("LeftFoot", "RightFoot")


class SupportLabel(str, Enum):
    DOUBLE = "DoubleSupport"
    LEFT = "LeftSupport"
    RIGHT = "RightSupport"

    def in_contact(self, side: str) -> bool:
        if self is SupportLabel.DOUBLE:
            return True
        return (self is SupportLabel.LEFT) == (side == "left")

    @property
    def sides(self) -> Tuple[str, ...]:
        return tuple(side for side in ("left", "right") if self.in_contact(side))


@dataclass
class MotionClip:
    """
    Link poses of a demonstrator sampled at a fixed rate.

    Attributes:
        rate: Frame rate (Hz)
        links: Link names, in the column order of the arrays
        positions: World link positions, shape (n_frames, n_links, 3)
        rotations: World link orientations as xyzw quaternions, shape (n_frames, n_links, 4)
    """

    rate: float
    links: List[str]
    positions: np.ndarray
    rotations: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.rotations = np.asarray(self.rotations, dtype=float)
        if not self.rate > 0.0:
            raise ValueError("clip rate must be positive")
        if len(self.positions) == 0:
            raise ValueError("empty clip")
        n_frames, n_links = len(self.positions), len(self.links)
        if self.positions.shape != (n_frames, n_links, 3):
            raise ValueError(f"positions must have shape ({n_frames}, {n_links}, 3)")
        if self.rotations.shape != (n_frames, n_links, 4):
            raise ValueError(f"rotations must have shape ({n_frames}, {n_links}, 4)")
        if not (np.all(np.isfinite(self.positions)) and np.all(np.isfinite(self.rotations))):
            raise ValueError("clip contains non-finite values")
        norms = np.linalg.norm(self.rotations, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("clip contains non-unit quaternions")
        self._index = {name: index for index, name in enumerate(self.links)}

    @property
    def n_frames(self) -> int:
        return len(self.positions)

    @property
    def duration(self) -> float:
        return (self.n_frames - 1) / self.rate

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_frames) / self.rate

    def has_link(self, link: str) -> bool:
        return link in self._index

    def link_index(self, link: str) -> int:
        try:
            return self._index[link]
        except KeyError:
            raise ConfigError(f"clip is missing link '{link}'") from None

    def pose(self, frame: int, link: str) -> Pose:
        index = self.link_index(link)
        return Pose(self.rotations[frame, index], self.positions[frame, index])

    def link_positions(self, link: str) -> np.ndarray:
        return self.positions[:, self.link_index(link)]

    def frame(self, frame: int) -> Dict[str, Pose]:
        return {link: self.pose(frame, link) for link in self.links}

    @property
    def frames(self) -> List[Dict[str, Pose]]:
        return [self.frame(k) for k in range(self.n_frames)]


@dataclass(frozen=True)
class Phase:
    label: SupportLabel
    start: int
    stop: int  # exclusive

    @property
    def length(self) -> int:
        return self.stop - self.start


@dataclass
class ContactSchedule:
    rate: float
    labels: List[SupportLabel]

    def __post_init__(self):
        self.labels = [SupportLabel(label) for label in self.labels]
        if not self.rate > 0.0:
            raise ValueError("schedule rate must be positive")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def duration(self) -> float:
        return (len(self.labels) - 1) / self.rate

    def phases(self) -> List[Phase]:
        phases = []
        start = 0
        for run in lpartition_by(lambda label: label, self.labels):
            phases.append(Phase(run[0], start, start + len(run)))
            start += len(run)
        return phases

    def label_at(self, time: float) -> SupportLabel:
        """Label of the frame whose interval [t_k, t_k+1) contains ``time`` (clamped)."""
        index = int(np.floor(time * self.rate + 1e-9))
        return self.labels[min(max(index, 0), len(self.labels) - 1)]

    def in_contact(self, frame: int, side: str) -> bool:
        return self.labels[frame].in_contact(side)


@dataclass(frozen=True)
class Correspondence:
    human: str
    robot: str
    weight: float = 1.0


@dataclass
class SkeletonMap:
    """
    Demonstrator skeleton description and its correspondence with robot frames.

    Attributes:
        correspondences: Human link -> robot frame pairs with task weights
        parents: Human skeleton tree (root maps to None)
        limbs: Limb of the segment that ends at each non-root human link
        scales: Scale factor per limb
        root_limb: Limb whose scale applies to the root translation
    """

    correspondences: List[Correspondence]
    parents: Dict[str, Optional[str]]
    limbs: Dict[str, str]
    scales: Dict[str, float] = field(default_factory=dict)
    root_limb: str = "leg"

    def __post_init__(self):
        roots = [link for link, parent in self.parents.items() if parent is None]
        if len(roots) != 1:
            raise ValueError(f"skeleton must have exactly one root, found {roots}")
        for link, parent in self.parents.items():
            if parent is not None and parent not in self.parents:
                raise ValueError(f"parent '{parent}' of '{link}' is not in the skeleton")
            if parent is not None and self.limbs.get(link) is None:
                raise ValueError(f"segment ending at '{link}' has no limb")
        for limb in set(self.limbs.values()) | {self.root_limb}:
            self.scales.setdefault(limb, 1.0)
        for limb, scale in self.scales.items():
            if not (np.isfinite(scale) and scale > 0.0):
                raise ValueError(f"scale of limb '{limb}' must be positive, got {scale}")
        for item in self.correspondences:
            if item.human not in self.parents:
                raise ValueError(f"correspondence link '{item.human}' is not in the skeleton")
            if item.weight < 0.0:
                raise ValueError(f"correspondence '{item.human}' has a negative weight")

    @property
    def root(self) -> str:
        return next(link for link, parent in self.parents.items() if parent is None)

    def topological_order(self) -> List[str]:
        order = [self.root]
        children: Dict[str, List[str]] = {}
        for link, parent in self.parents.items():
            if parent is not None:
                children.setdefault(parent, []).append(link)
        cursor = 0
        while cursor < len(order):
            order.extend(children.get(order[cursor], []))
            cursor += 1
        if len(order) != len(self.parents):
            raise ValueError("skeleton tree contains a cycle")
        return order

    def with_scales(self, scales: Dict[str, float]) -> "SkeletonMap":
        return replace(self, scales={**self.scales, **scales})

    def with_weights(self, weights: Dict[str, float]) -> "SkeletonMap":
        """Copy with task weights overridden per human link."""
        return replace(
            self,
            correspondences=[
                replace(item, weight=weights.get(item.human, item.weight))
                for item in self.correspondences
            ],
        )


def default_skeleton_map(scale: float = 0.85) -> SkeletonMap:
    """Map from the demo generator's skeleton onto the default robot model."""
    parents: Dict[str, Optional[str]] = {"Hips": None, "Head": "Hips"}
    limbs = {"Head": "torso"}
    correspondences = [
        Correspondence("Hips", "pelvis", 10.0),
        Correspondence("Head", "head", 1.0),
    ]
    for side, prefix in (("left", "Left"), ("right", "Right")):
        parents.update(
            {
                f"{prefix}UpLeg": "Hips",
                f"{prefix}Leg": f"{prefix}UpLeg",
                f"{prefix}Foot": f"{prefix}Leg",
                f"{prefix}Arm": "Hips",
                f"{prefix}ForeArm": f"{prefix}Arm",
                f"{prefix}Hand": f"{prefix}ForeArm",
            }
        )
        limbs.update(
            {
                f"{prefix}UpLeg": "leg",
                f"{prefix}Leg": "leg",
                f"{prefix}Foot": "leg",
                f"{prefix}Arm": "torso",
                f"{prefix}ForeArm": "arm",
                f"{prefix}Hand": "arm",
            }
        )
        correspondences += [
            Correspondence(f"{prefix}UpLeg", f"{side}_thigh", 1.0),
            Correspondence(f"{prefix}Leg", f"{side}_shin", 1.0),
            Correspondence(f"{prefix}Foot", f"{side}_foot", 10.0),
            Correspondence(f"{prefix}Arm", f"{side}_upper_arm", 1.0),
            Correspondence(f"{prefix}ForeArm", f"{side}_forearm", 1.0),
            Correspondence(f"{prefix}Hand", f"{side}_hand", 1.0),
        ]
    return SkeletonMap(
        correspondences=correspondences,
        parents=parents,
        limbs=limbs,
        scales={"leg": scale, "arm": scale, "torso": scale},
    )


def scale_skeleton(clip: MotionClip, skeleton_map: SkeletonMap) -> MotionClip:
    """
    Scale every skeleton segment by the factor of its limb.

    The root translation is scaled by the root limb's factor and each child
    is re-attached to its scaled parent, so orientations are unchanged.

    Raises:
        ConfigError: If a skeleton link is missing from the clip
    """
    order = skeleton_map.topological_order()
    indices = [clip.link_index(link) for link in order]
    source = clip.positions[:, indices]
    scaled = np.empty_like(source)
    position_of = {link: column for column, link in enumerate(order)}
    root_scale = skeleton_map.scales[skeleton_map.root_limb]
    scaled[:, 0] = root_scale * source[:, 0]
    for column, link in enumerate(order[1:], start=1):
        parent = position_of[skeleton_map.parents[link]]
        scale = skeleton_map.scales[skeleton_map.limbs[link]]
        scaled[:, column] = scaled[:, parent] + scale * (source[:, column] - source[:, parent])
    return MotionClip(clip.rate, list(order), scaled, clip.rotations[:, indices].copy())


def estimate_limb_scales(
    clip: MotionClip, skeleton_map: SkeletonMap, robot_frames: Dict[str, Pose], frame: int = 0
) -> Dict[str, float]:
    """
    Robot-to-human length ratio per limb.

    Human segment lengths are measured on one clip frame, robot lengths
    between the corresponding robot frames (e.g. forward kinematics of the
    nominal stance). Segments without robot counterparts at both ends are skipped.
    """
    robot_of = {item.human: item.robot for item in skeleton_map.correspondences}
    human_total: Dict[str, float] = {}
    robot_total: Dict[str, float] = {}
    for link, parent in skeleton_map.parents.items():
        if parent is None or link not in robot_of or parent not in robot_of:
            continue
        limb = skeleton_map.limbs[link]
        human = clip.positions[frame, clip.link_index(link)] - clip.positions[frame, clip.link_index(parent)]
        robot = robot_frames[robot_of[link]].translation - robot_frames[robot_of[parent]].translation
        human_total[limb] = human_total.get(limb, 0.0) + float(np.linalg.norm(human))
        robot_total[limb] = robot_total.get(limb, 0.0) + float(np.linalg.norm(robot))
    return {
        limb: robot_total[limb] / human_total[limb]
        for limb in human_total
        if human_total[limb] > 1e-9
    }


def resample_clip(clip: MotionClip, rate: float = CANONICAL_RATE) -> MotionClip:
    """Resample by linear interpolation of positions and slerp of orientations."""
    if not rate > 0.0:
        raise ValueError("rate must be positive")
    n_frames = int(np.floor(clip.duration * rate + 1e-9)) + 1
    times = np.arange(n_frames) / rate
    source_times = clip.times
    positions = np.empty((n_frames, len(clip.links), 3))
    rotations = np.empty((n_frames, len(clip.links), 4))
    for index in range(len(clip.links)):
        for axis in range(3):
            positions[:, index, axis] = np.interp(times, source_times, clip.positions[:, index, axis])
        if clip.n_frames == 1:
            rotations[:, index] = clip.rotations[0, index]
        else:
            interpolator = Slerp(source_times, Rotation.from_quat(clip.rotations[:, index]))
            rotations[:, index] = interpolator(np.minimum(times, source_times[-1])).as_quat()
    logger.info("resampled clip from %.1f Hz to %.1f Hz (%d frames)", clip.rate, rate, n_frames)
    return MotionClip(rate, list(clip.links), positions, rotations)


def contact_flags(
    positions: np.ndarray,
    rate: float,
    height_tolerance: float = DEFAULT_HEIGHT_TOLERANCE,
    velocity_tolerance: float = DEFAULT_VELOCITY_TOLERANCE,
) -> np.ndarray:
    """
    Per-frame contact state of one foot trajectory.

    A foot is in contact when it is within ``height_tolerance`` of its lowest
    height in the clip and moves slower than ``velocity_tolerance``.
    """
    positions = np.asarray(positions, dtype=float)
    height = positions[:, 2] - positions[:, 2].min()
    if len(positions) > 1:
        speed = np.linalg.norm(np.gradient(positions, 1.0 / rate, axis=0), axis=1)
    else:
        speed = np.zeros(len(positions))
    return (height < height_tolerance) & (speed < velocity_tolerance)


def labels_from_contacts(left: np.ndarray, right: np.ndarray, rate: float) -> List[SupportLabel]:
    """
    Raises:
        ScheduleError: If both feet are off the ground in some frame
    """
    labels = []
    for frame, (on_left, on_right) in enumerate(zip(left, right)):
        if on_left and on_right:
            labels.append(SupportLabel.DOUBLE)
        elif on_left:
            labels.append(SupportLabel.LEFT)
        elif on_right:
            labels.append(SupportLabel.RIGHT)
        else:
            raise ScheduleError(f"flight phase detected at frame {frame} (t={frame / rate:.2f}s)")
    return labels


def annotate_contacts_auto(
    clip: MotionClip,
    height_tolerance: float = DEFAULT_HEIGHT_TOLERANCE,
    velocity_tolerance: float = DEFAULT_VELOCITY_TOLERANCE,
    feet: Sequence[str] = DEFAULT_FEET,
) -> ContactSchedule:
    """
    Label each frame from foot heights and speeds.

    Raises:
        ConfigError: If a foot link is missing from the clip
        ScheduleError: If a flight phase (no foot on the ground) is detected
    """
    left, right = (
        contact_flags(clip.link_positions(foot), clip.rate, height_tolerance, velocity_tolerance)
        for foot in feet
    )
    schedule = ContactSchedule(clip.rate, labels_from_contacts(left, right, clip.rate))
    logger.info("annotated %d frames into %d phases", len(schedule), len(schedule.phases()))
    return schedule


def validate_schedule(schedule: ContactSchedule, min_phase_frames: int = 2) -> None:
    """
    Check the kinematic sanity of a stepping schedule.

    Raises:
        ScheduleError: If a phase is shorter than ``min_phase_frames`` or the
            support switches directly between the two single-support states
    """
    if not schedule.labels:
        raise ScheduleError("schedule has no frames")
    phases = schedule.phases()
    for phase in phases:
        if phase.length < min_phase_frames:
            raise ScheduleError(
                f"{phase.label.value} phase at frames {phase.start}-{phase.stop - 1} "
                f"is shorter than {min_phase_frames} frames"
            )
    for before, after in pairwise(phases):
        if SupportLabel.DOUBLE not in (before.label, after.label):
            raise ScheduleError(
                f"{before.label.value} -> {after.label.value} at frame {after.start} "
                "without an intervening DoubleSupport"
            )


def _pose_document(position: np.ndarray, rotation: np.ndarray) -> Dict[str, list]:
    return {"translation": position.tolist(), "rotation": rotation.tolist()}


def clip_to_json(clip: MotionClip, header: Optional[Dict] = None) -> Dict:
    return {
        "header": header or make_header("clip"),
        "rate": clip.rate,
        "links": list(clip.links),
        "frames": [
            {
                "time": k / clip.rate,
                "poses": {
                    link: _pose_document(clip.positions[k, index], clip.rotations[k, index])
                    for index, link in enumerate(clip.links)
                },
            }
            for k in range(clip.n_frames)
        ],
    }


def clip_from_json(document: Dict, path: PathLike = "<memory>") -> MotionClip:
    rate = require(document, "rate", path)
    frames = require(document, "frames", path)
    if not frames:
        raise FormatError(str(path), "empty clip")
    links = document.get("links") or list(frames[0].get("poses", {}))
    positions = np.empty((len(frames), len(links), 3))
    rotations = np.empty((len(frames), len(links), 4))
    for k, item in enumerate(frames):
        poses = item.get("poses")
        if not isinstance(poses, dict):
            raise FormatError(str(path), f"frames[{k}]: missing field 'poses'")
        for index, link in enumerate(links):
            pose = poses.get(link)
            if pose is None:
                raise FormatError(str(path), f"frames[{k}].poses: missing link '{link}'")
            try:
                positions[k, index] = pose["translation"]
                rotations[k, index] = pose["rotation"]
            except (KeyError, ValueError, TypeError) as exc:
                raise FormatError(
                    str(path), f"frames[{k}].poses.{link}: malformed pose ({exc})"
                ) from exc
    try:
        return MotionClip(float(rate), list(links), positions, rotations)
    except ValueError as exc:
        raise FormatError(str(path), str(exc)) from exc


def load_clip(path: PathLike) -> MotionClip:
    """
    Read a clip document.

    Raises:
        FormatError: With the offending line or field when the document is malformed
    """
    return clip_from_json(read_json(path, kind="clip"), path)


def save_clip(clip: MotionClip, path: PathLike, header: Optional[Dict] = None) -> Path:
    return write_json(path, clip_to_json(clip, header))


def load_schedule(path: PathLike) -> ContactSchedule:
    document = read_json(path, kind="schedule")
    labels = require(document, "labels", path)
    if not labels:
        raise FormatError(str(path), "empty schedule")
    try:
        return ContactSchedule(float(require(document, "rate", path)), labels)
    except ValueError as exc:
        raise FormatError(str(path), f"invalid label: {exc}") from exc


def save_schedule(schedule: ContactSchedule, path: PathLike, header: Optional[Dict] = None) -> Path:
    document = {
        "header": header or make_header("schedule"),
        "rate": schedule.rate,
        "labels": [label.value for label in schedule.labels],
    }
    return write_json(path, document)


def load_skeleton_map(path: PathLike) -> SkeletonMap:
    document = read_json(path, kind="skeleton_map")
    try:
        correspondences = [
            Correspondence(
                require(item, "human", path),
                require(item, "robot", path),
                float(item.get("weight", 1.0)),
            )
            for item in require(document, "correspondences", path)
        ]
        return SkeletonMap(
            correspondences=correspondences,
            parents=dict(require(document, "parents", path)),
            limbs=dict(require(document, "limbs", path)),
            scales={key: float(value) for key, value in document.get("scales", {}).items()},
            root_limb=document.get("root_limb", "leg"),
        )
    except (ValueError, TypeError) as exc:
        raise FormatError(str(path), str(exc)) from exc


def save_skeleton_map(skeleton_map: SkeletonMap, path: PathLike, header: Optional[Dict] = None) -> Path:
    document = {
        "header": header or make_header("skeleton_map"),
        "correspondences": [
            {"human": item.human, "robot": item.robot, "weight": item.weight}
            for item in skeleton_map.correspondences
        ],
        "parents": skeleton_map.parents,
        "limbs": skeleton_map.limbs,
        "scales": skeleton_map.scales,
        "root_limb": skeleton_map.root_limb,
    }
    return write_json(path, document)
