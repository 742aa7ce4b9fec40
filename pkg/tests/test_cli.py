import pytest

from mcmt_tracker.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from mcmt_tracker.io import GLOBAL_FILE, feature_file, track_file

@pytest.fixture
def scene(tmp_path):
    assert main(["synth", "--preset", "decoy", "--seed", "1", "--out", str(tmp_path / "scene")]) == EXIT_OK
    return tmp_path / "scene" / "run.json"

def test_synth_writes_a_runnable_folder(scene):
    assert scene.is_file()
    assert (scene.parent / "topology.json").is_file()
    assert feature_file(scene.parent / "detections", 1).is_file()

def test_pipeline_and_evaluate(scene, tmp_path, capsys):
    out = tmp_path / "out"
    capsys.readouterr()

    assert main(["pipeline", "--config", str(scene), "--out", str(out), "--jobs", "2"]) == EXIT_OK
    printed = capsys.readouterr().out
    assert "single-camera" in printed and "multi-camera" in printed
    assert (out / GLOBAL_FILE).is_file()

    assert main(["evaluate", "--config", str(scene), "--out", str(out)]) == EXIT_OK
    assert "multi-camera" in capsys.readouterr().out

def test_staged_commands(scene, tmp_path):
    out = tmp_path / "staged"
    for camera in ("0", "1"):
        assert main(["track", "--config", str(scene), "--out", str(out), "--camera", camera]) == EXIT_OK

    assert track_file(out, 1).is_file()
    assert main(["associate", "--config", str(scene), "--out", str(out)]) == EXIT_OK
    assert (out / GLOBAL_FILE).is_file()

def test_usage_errors(scene, tmp_path):
    assert main(["pipeline", "--config", str(tmp_path / "missing.json")]) == EXIT_USAGE
    assert main(["track", "--config", str(scene), "--camera", "9"]) == EXIT_USAGE
    assert main(["pipeline", "--config", str(scene), "--set", "tracker.max_lost=-1"]) == EXIT_USAGE
    assert main(["synth", "--preset", "clean", "--out", str(tmp_path / "x"), "--set", "lanes=20"]) == EXIT_USAGE

def test_corrupt_input_is_a_data_error(scene, tmp_path):
    path = feature_file(scene.parent / "detections", 0)
    path.write_bytes(path.read_bytes()[:-3])

    assert main(["pipeline", "--config", str(scene), "--out", str(tmp_path / "out")]) == EXIT_DATA

def test_argument_errors():
    with pytest.raises(SystemExit) as exc_info:
        main([])
    assert exc_info.value.code == EXIT_USAGE

    with pytest.raises(SystemExit) as exc_info:
        main(["associate", "--config", "run.json", "--jobs", "0"])
    assert exc_info.value.code == EXIT_USAGE

def test_ablate(tmp_path, capsys):
    db = tmp_path / "ablation.db"
    capsys.readouterr()

    assert main(["ablate", "--group", "ica", "--seeds", "1", "--db", str(db)]) == EXIT_OK

    printed = capsys.readouterr().out
    assert "tracklet+hungarian" in printed
    assert "box+reciprocal" in printed
    assert db.is_file()

def test_ablate_rejects_unknown_sections(tmp_path):
    config = tmp_path / "ablate.json"
    config.write_text('{"scenario": {}}')

    assert main(["ablate", "--config", str(config), "--seeds", "1"]) == EXIT_USAGE
