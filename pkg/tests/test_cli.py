import json

import pytest

from dance_retarget.cli import build_parser, main, resolve_config


def dry_run(capsys, *argv):
    code = main([*argv, "--dry-run"])
    return code, capsys.readouterr()


def test_dry_run_prints_the_config_hash(capsys):
    code, captured = dry_run(capsys, "pipeline")
    assert code == 0
    document = json.loads(captured.out)
    assert document["valid"] is True
    assert len(document["config_hash"]) == 64


def test_output_directory_does_not_change_the_hash(capsys):
    _, first = dry_run(capsys, "pipeline", "--out", "a")
    _, second = dry_run(capsys, "pipeline", "--out", "b")
    _, third = dry_run(capsys, "pipeline", "--horizon", "0.8")
    assert json.loads(first.out)["config_hash"] == json.loads(second.out)["config_hash"]
    assert json.loads(first.out)["config_hash"] != json.loads(third.out)["config_hash"]


def test_missing_model_file_exits_with_2(tmp_path, capsys):
    config = tmp_path / "dance.toml"
    config.write_text('[paths]\nmodel = "absent.json"\n')
    code, captured = dry_run(capsys, "pipeline", "--config", str(config))
    assert code == 2
    assert "does not exist" in captured.err


def test_bad_push_exits_with_2(capsys):
    code, captured = dry_run(capsys, "simulate", "--traj", "traj.json", "--push", "sideways")
    assert code == 2
    assert "cannot parse push" in captured.err


def test_horizon_out_of_range_exits_with_2(capsys):
    code, _ = dry_run(capsys, "optimize", "--traj", "traj.json", "--horizon", "5")
    assert code == 2


def test_flags_override_the_config_file(tmp_path):
    config = tmp_path / "dance.toml"
    config.write_text('seed = 1\ndisturbances = ["1,0,0@0.5+0.1"]\n[world]\ncarpet = false\n')
    args = build_parser().parse_args(
        ["simulate", "--config", str(config), "--traj", "t.json", "--seed", "9", "--carpet",
         "--push", "0,2,0@1+0.2", "--no-estimator"]
    )
    resolved = resolve_config(args)
    assert resolved.seed == 9
    assert resolved.world.carpet
    assert resolved.disturbances == ("1,0,0@0.5+0.1", "0,2,0@1+0.2")
    assert not resolved.execution.use_estimator


def test_sweep_values_must_be_numbers():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["sweep", "--values", "0.4,fast"])


def test_demo_gen_writes_its_documents(tmp_path, capsys):
    assert main(["demo-gen", "--out", str(tmp_path), "--strides", "1"]) == 0
    for name in ("clip.json", "schedule.json", "skeleton_map.json", "model.json"):
        assert (tmp_path / name).is_file()
    header = json.loads((tmp_path / "clip.json").read_text())["header"]
    assert header["kind"] == "clip"
    assert header["tool"] == "dance-retarget"
