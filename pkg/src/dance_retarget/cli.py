"""
dance-retarget command line.

Exit codes: 0 success, 1 numeric stage failure, 2 configuration or I/O error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from dance_retarget import __version__
from dance_retarget.artifacts import make_header, write_csv, write_json
from dance_retarget.config import PipelineConfig, config_hash, load_config, log_level
from dance_retarget.demo import generate_demo
from dance_retarget.dynamic_retarget import retarget_dynamic
from dance_retarget.errors import ConfigError, DanceRetargetError, StageError
from dance_retarget.execution import run_execution
from dance_retarget.model import default_model, load_model, save_model
from dance_retarget.motion import (
    annotate_contacts_auto,
    default_skeleton_map,
    load_clip,
    load_schedule,
    load_skeleton_map,
    save_clip,
    save_schedule,
    save_skeleton_map,
)
from dance_retarget.pipeline import run_pipeline, sweep
from dance_retarget.reporting import write_report_plots, write_trace_outputs
from dance_retarget.retarget import retarget_clip
from dance_retarget.stability import analyze_trajectory
from dance_retarget.trajectory import load_trajectory, save_trajectory

logger = logging.getLogger(__name__)

EPILOG = """
Examples:
  dance-retarget demo-gen --out data/
  dance-retarget retarget --clip data/clip.json --schedule data/schedule.json --out traj_geom.json
  dance-retarget optimize --traj traj_geom.json --horizon 1.2 --out traj_dyn.json
  dance-retarget analyze --traj traj_dyn.json --out-dir report/
  dance-retarget simulate --traj traj_dyn.json --horizon 1.2 --push "40,0,0@2.0+0.1" --carpet --seed 7 --out trace.bin
  dance-retarget pipeline --config dance.toml --out out/
  dance-retarget sweep --config dance.toml --values 0.4,0.6,0.8,1.0,1.2 --jobs 4
"""


def _model(config: PipelineConfig, path: Optional[str]):
    path = path or config.paths.model
    return load_model(path) if path else default_model()


def _header(config: PipelineConfig, kind: str) -> Dict[str, Any]:
    return make_header(kind, config_hash(config), config.seed)


def _values(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from exc


def cmd_demo_gen(args, config: PipelineConfig) -> int:
    clip, schedule = generate_demo(config.demo)
    out = Path(args.out)
    for path in (
        save_clip(clip, out / "clip.json", _header(config, "clip")),
        save_schedule(schedule, out / "schedule.json", _header(config, "schedule")),
        save_skeleton_map(default_skeleton_map(), out / "skeleton_map.json", _header(config, "skeleton_map")),
        save_model(default_model(), out / "model.json", _header(config, "model")),
    ):
        print(f"wrote {path}")
    return 0


def cmd_retarget(args, config: PipelineConfig) -> int:
    model = _model(config, args.model)
    clip = load_clip(args.clip)
    schedule = load_schedule(args.schedule) if args.schedule else annotate_contacts_auto(clip)
    skeleton_map = load_skeleton_map(args.map) if args.map else default_skeleton_map()
    trajectory = retarget_clip(model, clip, skeleton_map, config.retarget, schedule)
    print(f"wrote {save_trajectory(trajectory, args.out, _header(config, 'trajectory'))}")
    return 0


def cmd_optimize(args, config: PipelineConfig) -> int:
    model = _model(config, args.model)
    trajectory = load_trajectory(args.traj)
    schedule = load_schedule(args.schedule) if args.schedule else None
    optimize = config.optimize
    result = retarget_dynamic(
        model, trajectory, schedule, optimize.horizon, optimize.window_stride, optimize.settings,
        optimize.max_iterations,
    )
    print(f"wrote {save_trajectory(result.trajectory, args.out, _header(config, 'trajectory'))}")
    if args.log:
        print(f"wrote {write_csv(args.log, result.log, _header(config, 'convergence'))}")
    return 0


def cmd_analyze(args, config: PipelineConfig) -> int:
    model = _model(config, args.model)
    trajectory = load_trajectory(args.traj)
    report = analyze_trajectory(model, trajectory)
    out = Path(args.out_dir)
    stem = Path(args.traj).stem
    paths = [
        write_csv(out / f"{stem}_stability.csv", report.series, _header(config, "stability")),
        write_json(out / f"{stem}_stability.json", {"header": _header(config, "stability"), **report.summary()}),
        *write_report_plots(report, out, stem),
    ]
    for path in paths:
        print(f"wrote {path}")
    return 0


def cmd_simulate(args, config: PipelineConfig) -> int:
    model = _model(config, args.model)
    trajectory = load_trajectory(args.traj)
    schedule = load_schedule(args.schedule) if args.schedule else None
    trace = run_execution(model, trajectory, schedule, config.world, config.execution_config(), config.pushes())
    out = Path(args.out)
    trace_path = trace.save(out)
    stem = out.stem
    paths = [
        trace_path,
        *write_trace_outputs(trace, out.parent, _header(config, "trace"), stem),
        write_json(out.parent / f"{stem}_summary.json", {"header": _header(config, "summary"), **trace.summary()}),
    ]
    for path in paths:
        print(f"wrote {path}")
    return 1 if trace.fell and args.fail_on_fall else 0


def cmd_pipeline(args, config: PipelineConfig) -> int:
    result = run_pipeline(config)
    print(f"wrote {result.artifacts['report']}")
    return 0


def cmd_sweep(args, config: PipelineConfig) -> int:
    table = sweep(config, args.values, "horizon", args.jobs)
    print(table.to_string(index=False))
    print(f"wrote {config.output_dir / 'sweep.csv'}")
    return 0 if (table["status"] == "ok").all() else 1


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Pipeline TOML document (defaults plus .env when omitted)")
    parser.add_argument("--seed", type=int, help="RNG seed")
    parser.add_argument("--dry-run", action="store_true", help="Validate the configuration and stop")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dance-retarget",
        description="Retarget dance motions to a humanoid and execute them in closed-loop simulation",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=EPILOG,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], type=str.upper,
        help="Logging level (default: DANCE_LOG_LEVEL or INFO)",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    demo = commands.add_parser("demo-gen", help="Generate a stepping demonstration and its schedule")
    _add_common(demo)
    demo.add_argument("--out", default=".", help="Output directory")
    demo.add_argument("--strides", type=int, dest="demo_n_strides", help="Number of strides")
    demo.add_argument("--stride-length", type=float, dest="demo_stride_length", help="Stride length (m)")
    demo.add_argument("--period", type=float, dest="demo_stride_period", help="Stride period (s)")
    demo.add_argument("--arm-swing", type=float, dest="demo_arm_swing", help="Arm swing amplitude (rad)")
    demo.set_defaults(handler=cmd_demo_gen)

    retarget = commands.add_parser("retarget", help="Geometric retargeting of a clip")
    _add_common(retarget)
    retarget.add_argument("--model", help="Robot model JSON (default: built-in K18)")
    retarget.add_argument("--clip", required=True, help="Demonstrator clip JSON")
    retarget.add_argument("--schedule", help="Contact schedule JSON (default: auto-annotated)")
    retarget.add_argument("--map", help="Skeleton map JSON (default: generator skeleton)")
    retarget.add_argument("--out", default="traj_geom.json", help="Output trajectory")
    retarget.set_defaults(handler=cmd_retarget)

    optimize = commands.add_parser("optimize", help="Dynamic retargeting by receding-horizon optimization")
    _add_common(optimize)
    optimize.add_argument("--model", help="Robot model JSON")
    optimize.add_argument("--traj", required=True, help="Geometric trajectory JSON")
    optimize.add_argument("--schedule", help="Contact schedule JSON (default: trajectory labels)")
    optimize.add_argument("--horizon", type=float, help="Prediction horizon (s)")
    optimize.add_argument("--stride", type=int, dest="window_stride", help="Nodes applied per window")
    optimize.add_argument("--max-iterations", type=int, help="SQP iterations per window")
    optimize.add_argument("--out", default="traj_dyn.json", help="Output trajectory")
    optimize.add_argument("--log", help="Convergence log CSV")
    optimize.set_defaults(handler=cmd_optimize)

    analyze = commands.add_parser("analyze", help="ZMP, margin and momentum report of a trajectory")
    _add_common(analyze)
    analyze.add_argument("--model", help="Robot model JSON")
    analyze.add_argument("--traj", required=True, help="Trajectory JSON")
    analyze.add_argument("--out-dir", default=".", help="Output directory")
    analyze.set_defaults(handler=cmd_analyze)

    simulate = commands.add_parser("simulate", help="Closed-loop execution in simulation")
    _add_common(simulate)
    simulate.add_argument("--model", help="Robot model JSON")
    simulate.add_argument("--traj", required=True, help="Optimized trajectory JSON")
    simulate.add_argument("--schedule", help="Contact schedule JSON (default: trajectory labels)")
    simulate.add_argument("--horizon", type=float, help="MPC horizon (s)")
    simulate.add_argument("--push", action="append", default=[], help='Push "fx,fy,fz@start+duration"; repeatable')
    simulate.add_argument("--carpet", action="store_true", default=None, help="Soft floor")
    simulate.add_argument("--duration", type=float, help="Simulated time (s, default: trajectory length)")
    simulate.add_argument("--no-estimator", action="store_true", help="Control from the true state")
    simulate.add_argument("--async", action="store_true", dest="async_mode", help="Run the MPC in a planner thread")
    simulate.add_argument("--fail-on-fall", action="store_true", help="Exit with 1 if the robot falls")
    simulate.add_argument("--out", default="trace.npz", help="Trace archive")
    simulate.set_defaults(handler=cmd_simulate)

    pipeline = commands.add_parser("pipeline", help="Run every stage")
    _add_common(pipeline)
    pipeline.add_argument("--out", help="Output directory")
    pipeline.add_argument("--horizon", type=float, help="Prediction horizon (s)")
    pipeline.add_argument("--no-simulate", action="store_true", help="Skip closed-loop execution")
    pipeline.set_defaults(handler=cmd_pipeline)

    sweeper = commands.add_parser("sweep", help="Run the pipeline over several horizons")
    _add_common(sweeper)
    sweeper.add_argument("--values", type=_values, required=True, help="Comma-separated horizons (s)")
    sweeper.add_argument("--jobs", type=int, default=1, help="Parallel runs")
    sweeper.add_argument("--out", help="Output directory")
    sweeper.set_defaults(handler=cmd_sweep)
    return parser


def resolve_config(args) -> PipelineConfig:
    """Config file (or defaults and .env) with the command-line flags applied on top."""
    config = load_config(args.config)
    get = lambda name: getattr(args, name, None)  # noqa: E731
    overrides = {
        "seed": get("seed"),
        "optimize.horizon": get("horizon"),
        "optimize.window_stride": get("window_stride"),
        "optimize.max_iterations": get("max_iterations"),
        "world.carpet": get("carpet"),
        "execution.duration": get("duration"),
        "demo.n_strides": get("demo_n_strides"),
        "demo.stride_length": get("demo_stride_length"),
        "demo.stride_period": get("demo_stride_period"),
        "demo.arm_swing": get("demo_arm_swing"),
    }
    if args.command in ("pipeline", "sweep"):
        overrides["paths.output_dir"] = get("out")
    if get("no_estimator"):
        overrides["execution.use_estimator"] = False
    if get("async_mode"):
        overrides["execution.async_mode"] = True
    if get("no_simulate"):
        overrides["simulate"] = False
    config = config.with_overrides(**overrides)
    if get("push"):
        config = config.with_overrides(disturbances=tuple(config.disturbances) + tuple(args.push))
    return config


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=log_level(args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = resolve_config(args)
        config.validate()
        if args.dry_run:
            print(json.dumps({"config_hash": config_hash(config), "valid": True}))
            return 0
        return args.handler(args, config)
    except StageError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ConfigError, OSError) as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return 2
    except DanceRetargetError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
