"""SVG plots and CSV exports of stability reports and execution traces."""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from matplotlib.patches import Polygon  # noqa: E402

from dance_retarget.artifacts import PathLike, write_csv  # noqa: E402
from dance_retarget.execution import ExecutionTrace  # noqa: E402
from dance_retarget.stability import StabilityReport, SupportPolygon  # noqa: E402

logger = logging.getLogger(__name__)

# stable element ids so identical data gives identical files
matplotlib.rcParams["svg.hashsalt"] = "dance-retarget"

POLYGON_EVERY = 10


def _save(figure, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    figure.tight_layout()
    figure.savefig(path, format="svg", metadata={"Date": None})
    plt.close(figure)
    logger.debug("wrote %s", path)
    return path


def plot_zmp_path(
    zmp: np.ndarray,
    polygons: Sequence[Optional[SupportPolygon]],
    path: PathLike,
    title: str = "ZMP and support polygon",
    every: int = POLYGON_EVERY,
) -> Path:
    """
    Top view of the ZMP path over every ``every``-th support polygon.

    Args:
        zmp: (n, 2) ZMP positions, NaN where undefined
        polygons: Support polygon per sample (None when there is none)
    """
    figure, axes = plt.subplots(figsize=(8, 6))
    for polygon in list(polygons)[::max(every, 1)]:
        if polygon is None:
            continue
        axes.add_patch(Polygon(polygon.vertices, closed=True, fill=False, edgecolor="0.6", linewidth=0.6))
    axes.plot(zmp[:, 0], zmp[:, 1], color="tab:red", linewidth=1.2, label="ZMP")
    axes.set_xlabel("x [m]")
    axes.set_ylabel("y [m]")
    axes.set_title(title)
    axes.set_aspect("equal", adjustable="datalim")
    axes.autoscale_view()
    axes.legend(loc="upper right")
    return _save(figure, path)


def plot_time_series(
    frame: pd.DataFrame, columns: Dict[str, Sequence[str]], path: PathLike, title: str = ""
) -> Path:
    """One panel per entry of ``columns`` (panel label -> column names), sharing the time axis."""
    figure, panels = plt.subplots(len(columns), 1, figsize=(10, 2.4 * len(columns)), sharex=True, squeeze=False)
    for axes, (label, names) in zip(panels[:, 0], columns.items()):
        for name in names:
            if name in frame:
                axes.plot(frame["time"], frame[name], linewidth=0.9, label=name)
        axes.set_ylabel(label)
        axes.grid(True, linewidth=0.3)
        axes.legend(loc="upper right", fontsize="small")
    panels[-1, 0].set_xlabel("time [s]")
    if title:
        panels[0, 0].set_title(title)
    return _save(figure, path)


def write_report_plots(report: StabilityReport, out_dir: PathLike, stem: str) -> List[Path]:
    out_dir = Path(out_dir)
    series = report.series
    zmp = series[["zmp_x", "zmp_y"]].to_numpy(dtype=float)
    zmp[~series["zmp_valid"].to_numpy(dtype=bool)] = np.nan
    force_columns = [name for name in series.columns if name.startswith("f_")]
    panels = {
        "margin [m]": ["margin"],
        "CoM [m]": ["com_x", "com_y", "com_z"],
        "momentum": ["linear_momentum", "angular_momentum"],
        "foot height [m]": ["left_foot_z", "right_foot_z"],
    }
    if force_columns:
        panels["vertical force [N]"] = force_columns
    return [
        plot_zmp_path(zmp, report.polygons, out_dir / f"{stem}_zmp.svg", f"{stem}: ZMP ({report.zmp_source})"),
        plot_time_series(series, panels, out_dir / f"{stem}_series.svg", stem),
    ]


def write_trace_outputs(
    trace: ExecutionTrace, out_dir: PathLike, header: Dict[str, object], stem: str = "trace"
) -> List[Path]:
    """CSV of the trace plus its time-series plot."""
    out_dir = Path(out_dir)
    frame = trace.to_frame()
    panels = {
        "margin [m]": ["margin"],
        "tilt [rad]": ["tilt"],
        "joint error [rad]": ["joint_error_rms"],
        "foot force [N]": ["f_left_z", "f_right_z"],
        "estimate error": ["estimate_orientation_error", "estimate_position_error"],
    }
    return [
        write_csv(out_dir / f"{stem}.csv", frame, header),
        plot_time_series(frame, panels, out_dir / f"{stem}_series.svg", "closed-loop execution"),
    ]
