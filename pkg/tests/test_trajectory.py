import json
from dataclasses import replace

import numpy as np
import pytest

from dance_retarget.errors import FormatError, ModelError
from dance_retarget.motion import SupportLabel
from dance_retarget.trajectory import Trajectory, load_trajectory, save_trajectory


def test_times_and_duration(standing):
    assert standing.duration == pytest.approx(0.4)
    assert standing.times[-1] == pytest.approx(0.4)
    assert np.allclose(standing.configuration(3).base.translation, standing.base_translations[3])


def test_mismatched_node_counts_are_rejected(standing):
    with pytest.raises(ValueError, match="velocities"):
        Trajectory(standing.dt, standing.joint_names, standing.base_translations, standing.base_rotations,
                   standing.joints, standing.velocities[:-1])
    with pytest.raises(ValueError, match="labels"):
        Trajectory(standing.dt, standing.joint_names, standing.base_translations, standing.base_rotations,
                   standing.joints, standing.velocities, labels=[SupportLabel.DOUBLE])


def test_model_mismatch(standing, two_leg_model):
    with pytest.raises(ModelError):
        standing.check_model(two_leg_model)


def test_trajectory_file_keeps_labels_and_residuals(tmp_path, standing):
    document = replace(standing, residuals={"defect": np.zeros(standing.n_nodes)})
    path = save_trajectory(document, tmp_path / "traj.json")
    restored = load_trajectory(path)
    assert restored.labels == standing.labels
    assert restored.forces is None
    assert np.allclose(restored.residuals["defect"], 0.0)
    assert json.loads(path.read_text())["header"]["kind"] == "trajectory"


def test_wrong_document_kind(tmp_path):
    path = tmp_path / "clip.json"
    path.write_text('{"header": {"kind": "clip"}, "rate": 100}')
    with pytest.raises(FormatError, match="expected a 'trajectory' document"):
        load_trajectory(path)


def test_non_numeric_field(tmp_path, standing):
    path = save_trajectory(standing, tmp_path / "traj.json")
    document = json.loads(path.read_text())
    document["joints"][0][0] = "knee"
    path.write_text(json.dumps(document))
    with pytest.raises(FormatError, match="'joints' is not numeric"):
        load_trajectory(path)
