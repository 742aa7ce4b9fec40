import json

import pytest

from mcmt_tracker.config import (
    IcaConfig,
    MotionConfig,
    TrackerConfig,
    apply_overrides,
    build_model,
    load_run_config,
    read_settings,
)
from mcmt_tracker.errors import ConfigError

def write_json(path, data):
    path.write_text(json.dumps(data))
    return path

@pytest.fixture
def run_folder(tmp_path):
    (tmp_path / "detections").mkdir()
    (tmp_path / "gt").mkdir()
    (tmp_path / "topology.json").write_text("{}")
    return tmp_path

def test_defaults():
    tracker = TrackerConfig()
    ica = IcaConfig()

    assert (tracker.high_score, tracker.low_score) == (0.6, 0.1)
    assert tracker.use_ssa and tracker.use_trl and tracker.use_bt
    assert MotionConfig().gate_threshold == pytest.approx(9.4877)
    assert (ica.matrix, ica.method) == ("box", "reciprocal")
    assert ica.beta_t is None

def test_apply_overrides():
    settings = apply_overrides(
        {"tracker": {"max_lost": 10}},
        ["tracker.max_lost=40", "tracker.motion.smoothing=0.0", "ica.matrix=tracklet", "jobs=3"]
    )

    assert settings == {
        "tracker": {"max_lost": 40, "motion": {"smoothing": 0.0}},
        "ica": {"matrix": "tracklet"},
        "jobs": 3,
    }

    with pytest.raises(ConfigError):
        apply_overrides({}, ["no_value"])

    with pytest.raises(ConfigError):
        apply_overrides({"jobs": 2}, ["jobs.count=1"])

def test_build_model_wraps_validation_errors():
    with pytest.raises(ConfigError, match="tracker config"):
        build_model(TrackerConfig, {"low_score": 0.7, "high_score": 0.6}, "tracker config")

    with pytest.raises(ConfigError):
        build_model(IcaConfig, {"unknown_key": 1})

    assert build_model(IcaConfig, None) == IcaConfig()

def test_read_settings(tmp_path):
    with pytest.raises(ConfigError):
        read_settings(tmp_path / "missing.json")

    (tmp_path / "broken.json").write_text("{")
    with pytest.raises(ConfigError):
        read_settings(tmp_path / "broken.json")

    write_json(tmp_path / "list.json", [1, 2])
    with pytest.raises(ConfigError):
        read_settings(tmp_path / "list.json")

    assert read_settings(None, ["ica.k_mean=3"]) == {"ica": {"k_mean": 3}}

def test_load_run_config_resolves_relative_paths(run_folder):
    path = write_json(
        run_folder / "run.json",
        {"topology": "topology.json", "detections": "detections", "output": "out", "ground_truth": "gt"}
    )

    run = load_run_config(path, ["tracker.use_bt=false"])

    assert run.topology == run_folder.resolve() / "topology.json"
    assert run.output == run_folder.resolve() / "out"
    assert run.tracker.use_bt is False
    assert run.jobs == 1

def test_load_run_config_checks_inputs(run_folder):
    path = write_json(
        run_folder / "run.json",
        {"topology": "nowhere.json", "detections": "detections", "output": "out"}
    )
    with pytest.raises(ConfigError):
        load_run_config(path)

    path = write_json(
        run_folder / "run.json",
        {"topology": "topology.json", "detections": "detections", "output": "out", "jobs": 0}
    )
    with pytest.raises(ConfigError):
        load_run_config(path)
