import numpy as np

from dance_retarget.artifacts import make_header, read_csv, write_csv
from dance_retarget.reporting import plot_zmp_path, write_report_plots
from dance_retarget.stability import analyze_trajectory, polygon_for_points


def test_stability_plots_are_written(tmp_path, model, standing):
    paths = write_report_plots(analyze_trajectory(model, standing), tmp_path, "standing")
    assert [path.name for path in paths] == ["standing_zmp.svg", "standing_series.svg"]
    for path in paths:
        assert path.read_text().lstrip().startswith("<?xml")


def test_identical_data_gives_identical_svg(tmp_path):
    zmp = np.array([[0.0, 0.0], [0.01, 0.02], [np.nan, np.nan]])
    square = polygon_for_points(np.array([[0.1, 0.1, 0.0], [-0.1, 0.1, 0.0], [-0.1, -0.1, 0.0], [0.1, -0.1, 0.0]]))
    first = plot_zmp_path(zmp, [square, None, square], tmp_path / "a.svg")
    second = plot_zmp_path(zmp, [square, None, square], tmp_path / "b.svg")
    assert first.read_text() == second.read_text()


def test_csv_header_lines_are_skipped_on_read(tmp_path, model, standing):
    series = analyze_trajectory(model, standing).series
    path = write_csv(tmp_path / "series.csv", series, make_header("stability", "abc", 3))
    assert path.read_text().startswith("# tool=dance-retarget\n")
    restored = read_csv(path)
    assert list(restored.columns) == list(series.columns)
    assert len(restored) == len(series)
