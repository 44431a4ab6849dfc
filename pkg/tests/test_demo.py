import numpy as np
import pytest

from dance_retarget.demo import DemoParams, bell, generate_demo, minimum_jerk
from dance_retarget.errors import ConfigError
from dance_retarget.motion import SupportLabel, annotate_contacts_auto, validate_schedule


def test_profiles_start_and_end_at_rest():
    s = np.array([0.0, 0.5, 1.0])
    assert np.allclose(minimum_jerk(s), [0.0, 0.5, 1.0])
    assert np.allclose(bell(s), [0.0, 1.0, 0.0])


def test_demo_length_matches_parameters(short_demo):
    clip, schedule = short_demo
    assert clip.rate == 100.0
    assert clip.n_frames == 171
    assert len(schedule) == clip.n_frames


def test_demo_schedule_is_reproduced_by_annotation(short_demo):
    clip, schedule = short_demo
    assert annotate_contacts_auto(clip).labels == schedule.labels


def test_demo_schedule_steps_with_the_left_foot_first(short_demo):
    _, schedule = short_demo
    validate_schedule(schedule)
    labels = [phase.label for phase in schedule.phases()]
    assert labels == [SupportLabel.DOUBLE, SupportLabel.RIGHT, SupportLabel.DOUBLE]


def test_swing_foot_moves_forward(short_demo):
    clip, _ = short_demo
    left = clip.link_positions("LeftFoot")
    right = clip.link_positions("RightFoot")
    assert left[-1, 0] - left[0, 0] == pytest.approx(0.15, abs=1e-9)
    assert np.allclose(right[:, 0], right[0, 0])


def test_standing_demo_is_all_double_support(standing_demo):
    _, schedule = standing_demo
    assert set(schedule.labels) == {SupportLabel.DOUBLE}


def test_invalid_parameters_raise():
    with pytest.raises(ConfigError):
        generate_demo(DemoParams(n_strides=0))
    with pytest.raises(ConfigError):
        generate_demo(DemoParams(swing_fraction=1.0))
