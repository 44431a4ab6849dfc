import numpy as np
import pytest

from dance_retarget.errors import ConfigError, FormatError, ScheduleError
from dance_retarget.kinematics import forward_kinematics
from dance_retarget.motion import (
    ContactSchedule,
    Correspondence,
    MotionClip,
    SkeletonMap,
    SupportLabel,
    contact_flags,
    default_skeleton_map,
    estimate_limb_scales,
    labels_from_contacts,
    load_clip,
    load_schedule,
    load_skeleton_map,
    resample_clip,
    save_skeleton_map,
    scale_skeleton,
    validate_schedule,
)

D, L, R = SupportLabel.DOUBLE, SupportLabel.LEFT, SupportLabel.RIGHT
IDENTITY = [0.0, 0.0, 0.0, 1.0]


def two_link_clip(rate=10.0):
    positions = np.array([[[0.0, 0.0, 1.0], [0.0, 0.0, 0.5]], [[1.0, 0.0, 1.0], [1.0, 0.0, 0.0]]])
    quarter = [0.0, 0.0, np.sin(np.pi / 4), np.cos(np.pi / 4)]
    rotations = np.array([[IDENTITY, IDENTITY], [quarter, IDENTITY]])
    return MotionClip(rate, ["Hips", "Foot"], positions, rotations)


def test_support_label_sides():
    assert D.sides == ("left", "right")
    assert L.sides == ("left",)
    assert R.in_contact("right") and not R.in_contact("left")


def test_schedule_phases_partition_the_frames():
    schedule = ContactSchedule(100.0, [D, D, L, L, L, D, D])
    phases = schedule.phases()
    assert [(phase.label, phase.length) for phase in phases] == [(D, 2), (L, 3), (D, 2)]
    assert phases[-1].stop == len(schedule)


def test_label_at_clamps_to_the_schedule():
    schedule = ContactSchedule(10.0, [D, L, R])
    assert schedule.label_at(-1.0) is D
    assert schedule.label_at(0.15) is L
    assert schedule.label_at(5.0) is R


def test_validate_schedule_rejects_direct_single_support_switch():
    with pytest.raises(ScheduleError, match="without an intervening"):
        validate_schedule(ContactSchedule(100.0, [D, D, L, L, R, R, D, D]))


def test_validate_schedule_rejects_short_phase():
    with pytest.raises(ScheduleError, match="shorter than"):
        validate_schedule(ContactSchedule(100.0, [D, D, L, D, D]))


def test_validate_schedule_accepts_alternating_steps():
    validate_schedule(ContactSchedule(100.0, [D, D, L, L, D, D, R, R, D, D]))


def test_contact_flags_from_height_and_speed():
    rate = 100.0
    z = np.concatenate([np.zeros(20), np.linspace(0.0, 0.1, 20), np.full(20, 0.1)])
    positions = np.stack([np.zeros_like(z), np.zeros_like(z), z], axis=1)
    flags = contact_flags(positions, rate)
    assert flags[:15].all()
    assert not flags[25:].any()


def test_flight_phase_is_rejected():
    with pytest.raises(ScheduleError, match="flight"):
        labels_from_contacts(np.array([True, False]), np.array([True, False]), 100.0)


def test_resample_interpolates_positions_and_orientations():
    resampled = resample_clip(two_link_clip(), 100.0)
    assert resampled.n_frames == 11
    assert np.allclose(resampled.positions[5, 0], [0.5, 0.0, 1.0])
    middle = resampled.rotations[5, 0]
    assert np.allclose(np.abs(middle), [0.0, 0.0, np.sin(np.pi / 8), np.cos(np.pi / 8)])


def test_clip_rejects_non_unit_quaternion():
    with pytest.raises(ValueError, match="non-unit"):
        MotionClip(10.0, ["Hips"], np.zeros((1, 1, 3)), np.array([[[0.0, 0.0, 0.0, 2.0]]]))


def test_scale_skeleton_scales_segments_by_limb():
    skeleton = SkeletonMap([Correspondence("Hips", "pelvis")], {"Hips": None, "Foot": "Hips"}, {"Foot": "leg"})
    scaled = scale_skeleton(two_link_clip(), skeleton.with_scales({"leg": 0.5}))
    offset = scaled.positions[:, 1] - scaled.positions[:, 0]
    assert np.allclose(offset, [[0.0, 0.0, -0.25], [0.0, 0.0, -0.5]])
    assert np.allclose(scaled.positions[:, 0], 0.5 * two_link_clip().positions[:, 0])


def test_skeleton_needs_a_single_root():
    with pytest.raises(ValueError, match="exactly one root"):
        SkeletonMap([], {"A": None, "B": None}, {})


def test_limb_scales_of_demonstrator(model, short_demo):
    clip, _ = short_demo
    scales = estimate_limb_scales(clip, default_skeleton_map(), forward_kinematics(model, model.nominal_configuration()))
    assert scales["leg"] == pytest.approx(0.85, rel=1e-6)
    assert scales["torso"] == pytest.approx(0.85, rel=1e-6)
    assert scales["arm"] == pytest.approx(0.85 / 1.12, rel=1e-6)


def test_with_weights_overrides_named_links():
    skeleton = default_skeleton_map().with_weights({"Head": 5.0})
    weights = {item.human: item.weight for item in skeleton.correspondences}
    assert weights["Head"] == 5.0
    assert weights["Hips"] == 10.0


def test_skeleton_map_file(tmp_path):
    path = save_skeleton_map(default_skeleton_map(), tmp_path / "map.json")
    restored = load_skeleton_map(path)
    assert restored.root == "Hips"
    assert restored.scales["arm"] == pytest.approx(0.85)


def test_malformed_clip_reports_line(tmp_path):
    path = tmp_path / "clip.json"
    path.write_text('{\n  "rate": 100,\n  oops\n}\n')
    with pytest.raises(FormatError) as info:
        load_clip(path)
    assert info.value.line == 3


def test_clip_frame_missing_link(tmp_path):
    path = tmp_path / "clip.json"
    path.write_text(
        '{"rate": 100, "links": ["Hips", "Head"], "frames": '
        '[{"poses": {"Hips": {"translation": [0, 0, 1], "rotation": [0, 0, 0, 1]}}}]}'
    )
    with pytest.raises(FormatError, match="missing link 'Head'"):
        load_clip(path)


def test_schedule_with_unknown_label(tmp_path):
    path = tmp_path / "schedule.json"
    path.write_text('{"rate": 100, "labels": ["DoubleSupport", "Hopping"]}')
    with pytest.raises(FormatError, match="invalid label"):
        load_schedule(path)


def test_missing_clip_link_is_config_error():
    with pytest.raises(ConfigError):
        two_link_clip().link_index("Hand")
