"""
End-to-end pipeline: demonstration -> geometric retargeting -> dynamic
retargeting -> stability analysis -> closed-loop execution, plus horizon sweeps.
"""

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from dance_retarget.artifacts import make_header, write_csv, write_json
from dance_retarget.config import PipelineConfig, config_hash
from dance_retarget.demo import generate_demo
from dance_retarget.dynamic_retarget import retarget_dynamic
from dance_retarget.errors import ConfigError, DanceRetargetError, StageError
from dance_retarget.execution import ExecutionTrace, run_execution
from dance_retarget.model import RobotModel, default_model, load_model
from dance_retarget.motion import (
    ContactSchedule,
    MotionClip,
    SkeletonMap,
    annotate_contacts_auto,
    default_skeleton_map,
    load_clip,
    load_schedule,
    load_skeleton_map,
    save_clip,
    save_schedule,
    validate_schedule,
)
from dance_retarget.reporting import write_report_plots, write_trace_outputs
from dance_retarget.retarget import retarget_clip
from dance_retarget.stability import StabilityReport, analyze_trajectory
from dance_retarget.trajectory import Trajectory, save_trajectory

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ["horizon", "mean_swing_speed", "mean_com_speed", "min_margin", "fell", "mean_solve_ms"]


@dataclass
class PipelineInputs:
    model: RobotModel
    clip: MotionClip
    schedule: ContactSchedule
    skeleton_map: SkeletonMap


@dataclass
class PipelineResult:
    report: Dict[str, Any]
    artifacts: Dict[str, Path] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    geometric: Optional[Trajectory] = None
    dynamic: Optional[Trajectory] = None
    trace: Optional[ExecutionTrace] = None


class _StageClock:
    def __init__(self):
        self.timings: Dict[str, float] = {}

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        """Time a stage and wrap any failure in a StageError naming it."""
        logger.info("stage %s: started", name)
        started = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except (DanceRetargetError, OSError, ValueError) as exc:
            logger.error("stage %s: failed: %s", name, exc)
            raise StageError(name, exc) from exc
        self.timings[name] = time.perf_counter() - started
        logger.info("stage %s: done in %.2f s", name, self.timings[name])


def load_inputs(config: PipelineConfig) -> PipelineInputs:
    """Model, clip, schedule and skeleton map, from files or from the built-in generator."""
    paths = config.paths
    model = load_model(paths.model) if paths.model else default_model()
    if paths.clip:
        clip = load_clip(paths.clip)
        schedule = load_schedule(paths.schedule) if paths.schedule else annotate_contacts_auto(clip)
    else:
        clip, schedule = generate_demo(config.demo)
        if paths.schedule:
            schedule = load_schedule(paths.schedule)
    validate_schedule(schedule)
    skeleton_map = load_skeleton_map(paths.skeleton_map) if paths.skeleton_map else default_skeleton_map()
    return PipelineInputs(model, clip, schedule, skeleton_map)


def _stability_summary(report: StabilityReport) -> Dict[str, Any]:
    return {key: _plain(value) for key, value in report.summary().items()}


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {key: _plain(item) for key, item in value.items()}
    if isinstance(value, (np.floating, float)):
        return None if not np.isfinite(value) else float(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def run_pipeline(config: PipelineConfig) -> PipelineResult:
    """
    Run every stage and write the artifacts to ``config.output_dir``.

    ``report.json`` holds only deterministic quantities; wall-clock timings go
    to ``timings.json``.

    Raises:
        ConfigError: If the configuration is invalid
        StageError: If a stage fails; ``exit_code`` is 2 for I/O and config problems, 1 otherwise
    """
    config.validate()
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    digest = config_hash(config)
    clock = _StageClock()
    artifacts: Dict[str, Path] = {}

    def header(kind: str) -> Dict[str, Any]:
        return make_header(kind, digest, config.seed)

    with clock.stage("load"):
        inputs = load_inputs(config)
        model = inputs.model
        if not config.paths.clip:
            artifacts["clip"] = save_clip(inputs.clip, out / "clip.json", header("clip"))
        artifacts["schedule"] = save_schedule(inputs.schedule, out / "schedule.json", header("schedule"))

    with clock.stage("retarget"):
        geometric = retarget_clip(model, inputs.clip, inputs.skeleton_map, config.retarget, inputs.schedule)
        artifacts["traj_geom"] = save_trajectory(geometric, out / "traj_geom.json", header("trajectory"))

    with clock.stage("optimize"):
        optimize = config.optimize
        result = retarget_dynamic(
            model, geometric, None, optimize.horizon, optimize.window_stride, optimize.settings,
            optimize.max_iterations,
        )
        dynamic = result.trajectory
        artifacts["traj_dyn"] = save_trajectory(dynamic, out / "traj_dyn.json", header("trajectory"))
        log = result.log
        artifacts["convergence"] = write_csv(
            out / "convergence.csv", log.drop(columns=["solve_ms"], errors="ignore"), header("convergence")
        )

    with clock.stage("analyze"):
        geometric_report = analyze_trajectory(model, geometric)
        dynamic_report = analyze_trajectory(model, dynamic)
        for stem, report in (("geometric", geometric_report), ("dynamic", dynamic_report)):
            artifacts[f"{stem}_series"] = write_csv(out / f"{stem}_stability.csv", report.series, header("stability"))
            for path in write_report_plots(report, out, stem):
                artifacts[path.stem] = path

    trace = None
    execution_summary = None
    if config.simulate:
        with clock.stage("simulate"):
            trace = run_execution(
                model, dynamic, None, config.world, config.execution_config(), config.pushes()
            )
            artifacts["trace"] = trace.save(out / "trace.npz")
            for path in write_trace_outputs(trace, out, header("trace")):
                artifacts[path.stem] = path
            execution_summary = _plain(trace.summary(include_timing=False))

    report = {
        "header": header("report"),
        "model": model.name,
        "frames": len(inputs.schedule),
        "horizon": config.optimize.horizon,
        "geometric": _stability_summary(geometric_report),
        "dynamic": {
            **_stability_summary(dynamic_report),
            "windows": int(len(log)),
            "not_converged": int((~log["converged"]).sum()) if len(log) else 0,
            "max_defect": float(np.max(dynamic.residuals["defect"])) if "defect" in dynamic.residuals else None,
            "max_slip": float(np.max(dynamic.residuals["slip"])) if "slip" in dynamic.residuals else None,
        },
        "execution": execution_summary,
    }
    artifacts["report"] = write_json(out / "report.json", report)
    timings = {
        "stages": clock.timings,
        "optimize_mean_window_ms": float(log["solve_ms"].mean()) if "solve_ms" in log and len(log) else None,
        "mpc": _plain({key: value for key, value in trace.summary().items() if key.endswith("solve_ms")})
        if trace is not None else None,
    }
    artifacts["timings"] = write_json(out / "timings.json", {"header": header("timings"), **timings})
    logger.info("pipeline finished, artifacts in %s", out)
    return PipelineResult(report, artifacts, clock.timings, geometric, dynamic, trace)


def sweep_seed(seed: int, index: int) -> int:
    """Independent, reproducible seed for the index-th value of a sweep."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _sweep_row(args: Tuple[PipelineConfig, float]) -> Dict[str, Any]:
    config, value = args
    row: Dict[str, Any] = {"horizon": value}
    try:
        result = run_pipeline(config)
    except (DanceRetargetError, OSError) as exc:
        logger.error("sweep value %s failed: %s", value, exc)
        return {**row, **{name: None for name in SWEEP_COLUMNS[1:]}, "status": "failed", "error": str(exc)}
    dynamic = result.report["dynamic"]
    trace_summary = result.trace.summary() if result.trace is not None else {}
    return {
        **row,
        "mean_swing_speed": dynamic["mean_swing_speed"],
        "mean_com_speed": dynamic["mean_com_speed"],
        "min_margin": dynamic["min_margin"],
        "fell": trace_summary.get("fell"),
        "mean_solve_ms": trace_summary.get("mean_solve_ms"),
        "status": "ok",
        "error": "",
    }


def sweep(
    config: PipelineConfig,
    values: Sequence[float],
    parameter: str = "horizon",
    jobs: int = 1,
) -> pd.DataFrame:
    """
    One pipeline run per horizon value, each in its own subdirectory with its
    own seed. Failed values are recorded and the sweep continues.

    Raises:
        ConfigError: If the parameter is not supported or no value is given
    """
    if parameter != "horizon":
        raise ConfigError(f"unsupported sweep parameter '{parameter}'")
    if not values:
        raise ConfigError("a sweep needs at least one value")
    if jobs < 1:
        raise ConfigError("jobs must be at least 1")
    runs = []
    for index, value in enumerate(values):
        subdirectory = config.output_dir / f"{parameter}_{value:g}"
        run = config.with_overrides(
            **{"optimize.horizon": float(value), "paths.output_dir": str(subdirectory), "seed": sweep_seed(config.seed, index)}
        )
        runs.append((run, float(value)))
    if jobs == 1:
        rows = [_sweep_row(run) for run in runs]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_row, runs))
    table = pd.DataFrame(rows, columns=SWEEP_COLUMNS + ["status", "error"])
    path = write_csv(
        config.output_dir / "sweep.csv", table, make_header("sweep", config_hash(config), config.seed)
    )
    logger.info("sweep over %d values written to %s", len(values), path)
    return table

