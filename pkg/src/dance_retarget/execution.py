"""
Closed-loop execution of an optimized trajectory in simulation.

Lockstep schedule (default rates): physics every tick at 1000 Hz, state
estimation every tick, WBC every 2nd tick (500 Hz) with the torque held in
between, MPC every 20th tick (50 Hz). In async mode a planner thread runs
the MPC and publishes plans through a single-slot mailbox.
"""

import json
import logging
import re
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from dance_retarget.centroidal import ContactSet, state_from_motion
from dance_retarget.dynamic_retarget import subsample_trajectory
from dance_retarget.dynamics import PointForce
from dance_retarget.errors import ConfigError, FormatError, SimulationDivergedError
from dance_retarget.estimator import (
    EstimatedState,
    EstimatorConfig,
    SensorNoise,
    estimate_state,
    estimation_error,
    read_sensors,
)
from dance_retarget.kinematics import com_and_mass, compute_kinematics
from dance_retarget.model import SIDES, RobotModel
from dance_retarget.motion import ContactSchedule, SupportLabel
from dance_retarget.mpc import MpcPlan, interpolate_reference, mpc_step, plan_difference
from dance_retarget.ocp import OcpSettings, ReferenceTrack
from dance_retarget.simulator import SimWorld, initial_state, sim_step
from dance_retarget.stability import compute_zmp, polygon_for_points, stability_margin
from dance_retarget.trajectory import Trajectory
from dance_retarget.wbc import WbcTaskSet, WbcWeights, wbc_solve

logger = logging.getLogger(__name__)

_PUSH_PATTERN = re.compile(
    r"^\s*(?P<fx>[^,@+]+),(?P<fy>[^,@+]+),(?P<fz>[^,@+]+)@(?P<start>[^+]+)\+(?P<duration>.+?)\s*$"
)
LIMIT_MARGIN = 1e-3


@dataclass(frozen=True)
class Disturbance:
    """
    External push: a constant world force on a point of a link during a window.

    An empty ``frame`` means the floating base; ``offset`` is in the frame.
    """

    force: np.ndarray
    start: float
    duration: float
    frame: str = ""
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "force", np.asarray(self.force, dtype=float).reshape(3))
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float).reshape(3))
        if self.duration < 0.0:
            raise ConfigError(f"push duration must be non-negative, got {self.duration}")

    def active(self, t: float) -> bool:
        return self.start <= t < self.start + self.duration

    @property
    def impulse(self) -> np.ndarray:
        return self.force * self.duration


def parse_disturbance(text: str, frame: str = "") -> Disturbance:
    """
    Parse ``"fx,fy,fz@start+duration"`` (N, s).

    Raises:
        ConfigError: If the text does not match the pattern
    """
    match = _PUSH_PATTERN.match(text)
    if match is None:
        raise ConfigError(f"cannot parse push '{text}', expected 'fx,fy,fz@start+duration'")
    try:
        values = {key: float(value) for key, value in match.groupdict().items()}
    except ValueError as exc:
        raise ConfigError(f"cannot parse push '{text}': {exc}") from exc
    return Disturbance(
        np.array([values["fx"], values["fy"], values["fz"]]), values["start"], values["duration"], frame
    )


def pd_feedforward_torque(
    tau_f: np.ndarray,
    q_ref: np.ndarray,
    qd_ref: np.ndarray,
    q: np.ndarray,
    qd: np.ndarray,
    kp: Union[float, np.ndarray],
    kd: Union[float, np.ndarray],
    torque_limits: Optional[np.ndarray] = None,
) -> np.ndarray:
    """``tau_f + Kp (q_ref - q) + Kd (qd_ref - qd)``, clamped to the torque limits."""
    tau = np.asarray(tau_f, dtype=float) + kp * (np.asarray(q_ref) - q) + kd * (np.asarray(qd_ref) - qd)
    if torque_limits is None:
        return tau
    clamped = np.clip(tau, -torque_limits, torque_limits)
    saturated = np.flatnonzero(clamped != tau)
    if saturated.size:
        logger.info("torque clamped on joints %s", saturated.tolist())
    return clamped


@dataclass(frozen=True)
class ExecutionConfig:
    """
    Attributes:
        horizon: MPC prediction horizon (s)
        kp, kd: Joint PD gains on top of the WBC feedforward torque
        use_estimator: Feed the controllers with the estimate instead of the true state
        async_mode: Run the MPC in a planner thread (not bit-reproducible)
    """

    horizon: float = 1.2
    physics_rate: int = 1000
    wbc_rate: int = 500
    mpc_rate: int = 50
    kp: float = 80.0
    kd: float = 4.0
    seed: int = 0
    duration: Optional[float] = None
    noise: SensorNoise = SensorNoise()
    estimator: EstimatorConfig = EstimatorConfig()
    wbc_weights: WbcWeights = WbcWeights()
    ocp: OcpSettings = OcpSettings()
    fall_tilt: float = 0.6
    fall_height_ratio: float = 0.5
    use_estimator: bool = True
    async_mode: bool = False

    @property
    def wbc_every(self) -> int:
        return self.physics_rate // self.wbc_rate

    @property
    def mpc_every(self) -> int:
        return self.physics_rate // self.mpc_rate

    def validate(self) -> None:
        if min(self.physics_rate, self.wbc_rate, self.mpc_rate) <= 0:
            raise ConfigError("control rates must be positive")
        if self.physics_rate % self.wbc_rate or self.physics_rate % self.mpc_rate:
            raise ConfigError("WBC and MPC rates must divide the physics rate")
        if self.kp < 0.0 or self.kd < 0.0:
            raise ConfigError("PD gains must be non-negative")
        if int(round(self.horizon / self.ocp.dt)) < 2:
            raise ConfigError(f"horizon {self.horizon} s is shorter than two OCP nodes")
        self.noise.validate()
        self.estimator.validate()
        self.wbc_weights.validate()
        self.ocp.validate()


@dataclass
class ExecutionContext:
    duration: float
    disturbances: List[Disturbance] = field(default_factory=list)
    events: List[Dict[str, object]] = field(default_factory=list)

    def record(self, t: float, kind: str, **detail) -> None:
        self.events.append({"time": round(float(t), 6), "kind": kind, **detail})

    def pushes(self, model: RobotModel, data, t: float) -> List[PointForce]:
        forces = []
        for push in self.disturbances:
            if push.active(t):
                frame = push.frame or model.links[0].name
                _, rotation, position = data.frame_placement(frame)
                forces.append(PointForce(frame, position + rotation @ push.offset, push.force))
        return forces


def inject_disturbance(context: ExecutionContext, disturbance: Disturbance) -> None:
    """
    Schedule a push. Overlapping pushes add up.

    Raises:
        ConfigError: If the push starts outside the simulated span
    """
    if not 0.0 <= disturbance.start < context.duration:
        raise ConfigError(f"push at {disturbance.start} s is outside the simulated span [0, {context.duration}) s")
    context.disturbances.append(disturbance)
    context.record(
        disturbance.start, "push", force=disturbance.force.tolist(), duration=disturbance.duration,
        frame=disturbance.frame or "base",
    )
    logger.info("push of %s N at %.3f s for %.3f s", disturbance.force.tolist(), disturbance.start, disturbance.duration)


@dataclass
class ExecutionTrace:
    """
    Per-physics-tick record of a closed-loop run. ``solve_ms`` is kept apart
    from the state arrays: it is the only machine-dependent column.
    """

    joint_names: List[str]
    leg_joints: Dict[str, np.ndarray]
    arrays: Dict[str, np.ndarray]
    labels: List[str]
    events: List[Dict[str, object]]
    solve_ms: np.ndarray
    fell: bool = False
    fall_time: Optional[float] = None

    @property
    def time(self) -> np.ndarray:
        return self.arrays["time"]

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return dict(self.arrays)

    def joint_errors(self) -> np.ndarray:
        return self.arrays["q_ref"] - self.arrays["q"][:, 7:]

    def group_rms(self) -> Dict[str, float]:
        errors = self.joint_errors()
        squares = {"stance_leg": [], "swing_leg": []}
        for k, label in enumerate(self.labels):
            support = SupportLabel(label)
            for side in SIDES:
                group = "stance_leg" if support.in_contact(side) else "swing_leg"
                squares[group].extend(np.square(errors[k, self.leg_joints[side]]))
        return {name: float(np.sqrt(np.mean(values))) if values else 0.0 for name, values in squares.items()}

    def touchdowns(self) -> List[Dict[str, object]]:
        return [event for event in self.events if event["kind"] == "touchdown"]

    def touchdown_shift_along_push(self) -> Optional[float]:
        """
        Largest signed touchdown displacement along the horizontal direction of
        the first push, over touchdowns at or after it. None without a
        horizontal push or a later touchdown.
        """
        pushes = [e for e in self.events if e["kind"] == "push" and np.hypot(*e["force"][0:2]) > 0.0]
        if not pushes:
            return None
        push = min(pushes, key=lambda e: e["time"])
        direction = np.asarray(push["force"][0:2], dtype=float)
        direction /= np.linalg.norm(direction)
        shifts = [
            float(direction @ [e["dx"], e["dy"]]) for e in self.touchdowns() if e["time"] >= push["time"]
        ]
        return max(shifts, default=None)

    def summary(self, include_timing: bool = True) -> Dict[str, object]:
        margins = self.arrays["margin"]
        kinds: Dict[str, int] = {}
        for event in self.events:
            kinds[str(event["kind"])] = kinds.get(str(event["kind"]), 0) + 1
        displacements = [float(np.hypot(e["dx"], e["dy"])) for e in self.touchdowns()]
        summary = {
            "fell": self.fell,
            "fall_time": self.fall_time,
            "duration": float(self.time[-1]) if len(self.time) else 0.0,
            "min_margin": float(np.nanmin(margins)) if np.isfinite(margins).any() else None,
            "joint_rms": float(np.sqrt(np.mean(np.square(self.joint_errors())))) if len(self.time) else 0.0,
            **{f"{name}_rms": value for name, value in self.group_rms().items()},
            "max_touchdown_displacement": max(displacements, default=0.0),
            "touchdown_shift_along_push": self.touchdown_shift_along_push(),
            "events": kinds,
            "knee_limit_events": sum(
                1 for e in self.events if e["kind"] == "joint limit" and "knee" in str(e.get("joint", ""))
            ),
        }
        if include_timing:
            solves = self.solve_ms[np.isfinite(self.solve_ms)]
            summary["mean_solve_ms"] = float(np.mean(solves)) if solves.size else None
            summary["max_solve_ms"] = float(np.max(solves)) if solves.size else None
        return summary

    def to_frame(self) -> pd.DataFrame:
        arrays = self.arrays
        frame = pd.DataFrame(
            {
                "time": arrays["time"],
                "label": self.labels,
                "base_x": arrays["q"][:, 0],
                "base_y": arrays["q"][:, 1],
                "base_z": arrays["q"][:, 2],
                "com_z": arrays["com"][:, 2],
                "tilt": arrays["tilt"],
                "zmp_x": arrays["zmp"][:, 0],
                "zmp_y": arrays["zmp"][:, 1],
                "margin": arrays["margin"],
                "joint_error_rms": np.sqrt(np.mean(np.square(self.joint_errors()), axis=1)),
                "estimate_orientation_error": arrays["estimate_error"][:, 0],
                "estimate_position_error": arrays["estimate_error"][:, 1],
                "tau_norm": np.linalg.norm(arrays["tau"], axis=1),
                "mpc_solve_ms": self.solve_ms,
            }
        )
        for i, side in enumerate(SIDES):
            frame[f"f_{side}_z"] = arrays["foot_forces"][:, i, 2]
            frame[f"f_{side}_t"] = np.linalg.norm(arrays["foot_forces"][:, i, 0:2], axis=1)
        return frame

    def save(self, path: Union[str, Path]) -> Path:
        """Write the trace as a NumPy archive at exactly ``path``."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = {
            "joint_names": self.joint_names,
            "leg_joints": {side: indices.tolist() for side, indices in self.leg_joints.items()},
            "labels": self.labels,
            "events": self.events,
            "fell": self.fell,
            "fall_time": self.fall_time,
        }
        with path.open("wb") as handle:
            np.savez_compressed(handle, meta=np.array(json.dumps(meta)), solve_ms=self.solve_ms, **self.arrays)
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExecutionTrace":
        try:
            with np.load(Path(path), allow_pickle=False) as archive:
                meta = json.loads(str(archive["meta"]))
                arrays = {key: archive[key] for key in archive.files if key not in ("meta", "solve_ms")}
                solve_ms = archive["solve_ms"]
        except (OSError, ValueError, KeyError) as exc:
            raise FormatError(str(path), f"not an execution trace: {exc}") from exc
        return cls(
            meta["joint_names"],
            {side: np.array(indices, dtype=int) for side, indices in meta["leg_joints"].items()},
            arrays,
            meta["labels"],
            meta["events"],
            solve_ms,
            meta["fell"],
            meta["fall_time"],
        )


class PlanMailbox:
    """Single-slot, lock-guarded plan exchange between the planner and the controller."""

    def __init__(self):
        self._lock = threading.Lock()
        self._plan: Optional[MpcPlan] = None
        self._request: Optional[Tuple[float, object]] = None
        self._wake = threading.Event()
        self.stopped = False

    def publish(self, plan: MpcPlan) -> None:
        with self._lock:
            self._plan = plan

    def latest(self) -> Optional[MpcPlan]:
        with self._lock:
            return self._plan

    def request(self, time_now: float, estimate) -> None:
        with self._lock:
            self._request = (time_now, estimate)
        self._wake.set()

    def take_request(self, timeout: float = 0.1):
        if not self._wake.wait(timeout):
            return None
        with self._lock:
            request, self._request = self._request, None
            self._wake.clear()
        return request

    def stop(self) -> None:
        self.stopped = True
        self._wake.set()


def _planner(mailbox: PlanMailbox, plan_once) -> None:
    while not mailbox.stopped:
        request = mailbox.take_request()
        if request is None or mailbox.stopped:
            continue
        time_now, estimate = request
        plan = plan_once(time_now, estimate, mailbox.latest())
        if plan is not None:
            mailbox.publish(plan)


def _reference_feet(model: RobotModel, trajectory: Trajectory) -> np.ndarray:
    feet = np.zeros((trajectory.n_nodes, len(SIDES), 3))
    for k, q in enumerate(trajectory.configurations()):
        data = compute_kinematics(model, q)
        feet[k] = [data.positions[model.foot_link_index(side)] for side in SIDES]
    return feet


def run_execution(
    model: RobotModel,
    trajectory: Trajectory,
    schedule: Optional[ContactSchedule] = None,
    world: SimWorld = SimWorld(),
    config: ExecutionConfig = ExecutionConfig(),
    disturbances: Sequence[Disturbance] = (),
) -> ExecutionTrace:
    """
    Execute a trajectory in closed loop.

    A fall (torso tilt above ``fall_tilt`` or CoM below ``fall_height_ratio``
    of its initial height) ends the run and is reported in the trace.

    Raises:
        ConfigError: If the configuration is invalid or the schedule does not match
        SimulationDivergedError: If the simulation blows up; the message carries the time
    """
    config.validate()
    world.validate()
    trajectory.check_model(model)
    if schedule is not None:
        if len(schedule) != trajectory.n_nodes:
            raise ConfigError(f"schedule has {len(schedule)} frames, trajectory has {trajectory.n_nodes} nodes")
        trajectory = replace(trajectory, labels=list(schedule.labels))
    elif trajectory.labels is None:
        raise ConfigError("execution needs support labels from the trajectory or a schedule")
    trajectory = subsample_trajectory(trajectory, config.ocp.dt)
    labels = [SupportLabel(label) for label in trajectory.labels]

    contacts = ContactSet.from_model(model, config.ocp.contact_inset)
    track = ReferenceTrack.from_trajectory(model, trajectory, contacts)
    n_intervals = int(round(config.horizon / config.ocp.dt))
    tasks = WbcTaskSet(contacts, weights=config.wbc_weights, friction=config.ocp.friction)
    reference_feet = _reference_feet(model, trajectory)
    duration = trajectory.duration if config.duration is None else config.duration
    context = ExecutionContext(duration)
    for disturbance in disturbances:
        inject_disturbance(context, disturbance)

    rng = np.random.default_rng(config.seed)
    dt = 1.0 / config.physics_rate
    n_ticks = int(round(duration * config.physics_rate))
    q0 = trajectory.configuration(0)
    state = initial_state(model, q0, trajectory.velocities[0])
    estimate = EstimatedState.from_truth(q0, state.v)
    nominal_com_height = com_and_mass(model, q0)[0][2]
    previous_labels = labels[0]
    torque = np.zeros(model.n_q)
    plan: Optional[MpcPlan] = None
    reference = None
    limit_hits = np.zeros(model.n_q, dtype=bool)
    records: Dict[str, list] = {key: [] for key in (
        "time", "q", "v", "q_ref", "tau", "foot_forces", "zmp", "margin", "tilt", "com",
        "feet", "reference_feet", "estimate_error", "max_tangential_ratio", "wbc_residual", "penetration",
    )}
    tick_labels: List[str] = []
    solve_ms: List[float] = []
    fell, fall_time = False, None

    def plan_once(time_now, centroidal_estimate, previous):
        result = mpc_step(model, contacts, track, time_now, centroidal_estimate, n_intervals, config.ocp, previous)
        for message in result.events:
            context.record(time_now, "mpc failure", detail=message)
        return result.plan

    mailbox, planner = None, None
    if config.async_mode:
        mailbox = PlanMailbox()
        planner = threading.Thread(target=_planner, args=(mailbox, plan_once), daemon=True)
        planner.start()

    started = time.perf_counter()
    try:
        for tick in range(n_ticks):
            t = tick * dt
            node = min(int(np.floor(t / trajectory.dt + 1e-9)), trajectory.n_nodes - 1)
            label = labels[node]
            controlled = (estimate.configuration, estimate.generalized_velocity) if config.use_estimator else (state.q, state.v)

            tick_solve, tick_residual = np.nan, np.nan
            if tick % config.mpc_every == 0:
                centroidal_estimate = state_from_motion(model, *controlled)
                if mailbox is None or plan is None:
                    tic = time.perf_counter()
                    new_plan = plan_once(t, centroidal_estimate, plan)
                    tick_solve = 1e3 * (time.perf_counter() - tic)
                    if plan is not None and new_plan is not plan:
                        change = plan_difference(plan, new_plan)
                        if change > 0.05:
                            logger.debug("plan changed by %.3f rad at t=%.3f s", change, t)
                    plan = new_plan
                else:
                    mailbox.request(t, centroidal_estimate)
                    plan = mailbox.latest() or plan
                    tick_solve = plan.solve_ms

            if tick % config.wbc_every == 0:
                reference = interpolate_reference(plan, t)
                if not reference.in_span:
                    context.record(t, "reference out of span")
                result = wbc_solve(model, controlled[0], controlled[1], reference.references, tasks, torque)
                tick_residual = result.dynamics_residual
                if not result.solved:
                    context.record(t, "wbc fallback")
                q_ref, qd_ref = reference.references.q.joints, reference.references.v[6:]
                measured_q, measured_qd = controlled[0].joints, controlled[1][6:]
                torque = pd_feedforward_torque(
                    result.torque, q_ref, qd_ref, measured_q, measured_qd, config.kp, config.kd, model.torque_limits
                )
                if np.any(np.abs(torque) >= model.torque_limits):
                    context.record(t, "torque clamp", joints=np.flatnonzero(np.abs(torque) >= model.torque_limits).tolist())

            data = compute_kinematics(model, state.q)
            step = sim_step(world, model, state, torque, dt, context.pushes(model, data, t))
            contact = step.contacts
            state = step.state

            sensors = read_sensors(state.q, state.v, step.acceleration, state.time, config.noise, rng, world.gravity)
            flags = {side: label.in_contact(side) and contact.in_contact(side) for side in SIDES}
            estimate = estimate_state(model, estimate, sensors, flags, dt, config.estimator, world.gravity)

            zmp = compute_zmp(contact.points, contact.forces)
            polygon = polygon_for_points(contact.points[contact.active])
            margin = stability_margin(zmp, polygon) if zmp.valid and polygon is not None else np.nan
            rotation = state.q.base.rotation_matrix
            tilt = float(np.arccos(np.clip(rotation[2, 2], -1.0, 1.0)))
            after = compute_kinematics(model, state.q)
            com, _ = com_and_mass(model, state.q, after)
            feet = np.array([after.positions[model.foot_link_index(side)] for side in SIDES])
            normal = contact.forces[:, 2]
            tangential = np.linalg.norm(contact.forces[:, 0:2], axis=1)
            ratio = float(np.max(np.where(normal > 0.0, tangential / np.where(normal > 0.0, normal, 1.0), 0.0)))

            for i, side in enumerate(SIDES):
                if label.in_contact(side) and not previous_labels.in_contact(side):
                    dx, dy = (feet[i, 0:2] - reference_feet[node, i, 0:2]).tolist()
                    context.record(t, "touchdown", side=side, dx=dx, dy=dy)
            previous_labels = label
            near = (state.q.joints <= model.lower + LIMIT_MARGIN) | (state.q.joints >= model.upper - LIMIT_MARGIN)
            for j in np.flatnonzero(near & ~limit_hits):
                context.record(t, "joint limit", joint=model.joints[j].name)
                logger.warning("joint %s reached its limit at t=%.3f s", model.joints[j].name, t)
            limit_hits = near

            records["time"].append(state.time)
            records["q"].append(np.concatenate([state.q.base.translation, state.q.base.rotation, state.q.joints]))
            records["v"].append(state.v.copy())
            records["q_ref"].append(reference.references.q.joints)
            records["tau"].append(torque.copy())
            records["foot_forces"].append([contact.foot_force(side) for side in SIDES])
            records["zmp"].append([zmp.x, zmp.y])
            records["margin"].append(margin)
            records["tilt"].append(tilt)
            records["com"].append(com)
            records["feet"].append(feet)
            records["reference_feet"].append(reference_feet[node])
            records["estimate_error"].append(estimation_error(estimate, state.q, state.v))
            records["max_tangential_ratio"].append(ratio)
            records["wbc_residual"].append(tick_residual)
            records["penetration"].append(float(np.max(contact.penetration, initial=0.0)))
            tick_labels.append(label.value)
            solve_ms.append(tick_solve)

            if tilt > config.fall_tilt or com[2] < config.fall_height_ratio * nominal_com_height:
                fell, fall_time = True, float(state.time)
                context.record(state.time, "fall", tilt=tilt, com_height=float(com[2]))
                logger.warning("fall detected at t=%.3f s (tilt %.2f rad, CoM height %.3f m)", state.time, tilt, com[2])
                break
    except SimulationDivergedError:
        logger.error("simulation diverged after %.3f s of wall time", time.perf_counter() - started)
        raise
    finally:
        if mailbox is not None:
            mailbox.stop()
            planner.join(timeout=5.0)

    trace = ExecutionTrace(
        joint_names=[joint.name for joint in model.joints],
        leg_joints={side: np.asarray(model.leg_joints[side], dtype=int) for side in SIDES},
        arrays={key: np.array(values, dtype=float) for key, values in records.items()},
        labels=tick_labels,
        events=context.events,
        solve_ms=np.array(solve_ms, dtype=float),
        fell=fell,
        fall_time=fall_time,
    )
    summary = trace.summary()
    logger.info(
        "execution finished: %.2f s simulated in %.1f s, fell=%s, min margin %s, mean MPC solve %s ms",
        summary["duration"], time.perf_counter() - started, fell, summary["min_margin"], summary["mean_solve_ms"],
    )
    return trace

