import json

import numpy as np
import pytest

from mcmt_tracker.config import load_run_config
from mcmt_tracker.core import DetBox, Rect, Tracklet
from mcmt_tracker.errors import ConfigError, IntegrityError, ParseError
from mcmt_tracker.evaluation import Observations
from mcmt_tracker.io import (
    detection_file,
    feature_file,
    load_camera_detections,
    read_features,
    read_global_ids,
    read_ground_truth,
    read_topology,
    read_tracks,
    track_file,
    write_detections,
    write_features,
    write_global_ids,
    write_ground_truth,
    write_scenario,
    write_topology,
    write_tracks,
)
from mcmt_tracker.synth import generate_scenario, preset

def make_box(frame, det_id, x, feature, score=0.8):
    return DetBox(frame=frame, rect=Rect(x, 20.5, 40, 30), score=score, feature=np.asarray(feature), det_id=det_id)

def sample_frames():
    return [
        (0, [make_box(0, 0, 10.25, [1, 0, 0]), make_box(0, 1, 100, [0, 1, 0])]),
        (2, [make_box(2, 0, 12.5, [1, 0.1, 0], score=1.0)]),
    ]

def test_detections_round_trip(tmp_path):
    write_detections(tmp_path, 3, sample_frames())

    assert detection_file(tmp_path, 3).name == "c003_det.csv"
    frames = load_camera_detections(tmp_path, 3)

    assert [frame for frame, _ in frames] == [0, 2]
    first = frames[0][1][0]
    assert first.rect == Rect(10.25, 20.5, 40, 30)
    assert first.score == 0.8
    np.testing.assert_array_equal(frames[1][1][0].feature, np.float32([1, 0.1, 0]))

def test_empty_camera(tmp_path):
    write_detections(tmp_path, 0, [(0, []), (1, [])])
    assert load_camera_detections(tmp_path, 0) == []

def test_missing_files(tmp_path):
    with pytest.raises(ParseError):
        load_camera_detections(tmp_path, 0)

def test_row_count_mismatch(tmp_path):
    write_detections(tmp_path, 0, sample_frames())
    write_features(feature_file(tmp_path, 0), np.ones((2, 3)))

    with pytest.raises(IntegrityError):
        load_camera_detections(tmp_path, 0)

def test_truncated_feature_header(tmp_path):
    path = tmp_path / "feat.bin"
    path.write_bytes(b"\x01\x00")

    with pytest.raises(IntegrityError):
        read_features(path)

def test_feature_size_mismatch(tmp_path):
    path = tmp_path / "feat.bin"
    write_features(path, np.ones((2, 4)))
    path.write_bytes(path.read_bytes()[:-4])

    with pytest.raises(IntegrityError):
        read_features(path)

def test_feature_header_layout(tmp_path):
    path = tmp_path / "feat.bin"
    write_features(path, np.ones((2, 4)))
    data = path.read_bytes()

    assert data[:8] == b"\x02\x00\x00\x00\x04\x00\x00\x00"
    assert len(data) == 8 + 2 * 4 * 4

def _rewrite_line(path, index, line):
    lines = path.read_text().splitlines()
    lines[index] = line
    path.write_text("\n".join(lines) + "\n")

@pytest.mark.parametrize(
    "row",
    [
        "0,5,1.0,2.0,0,10,0.5",
        "0,5,nan,2.0,10,10,0.5",
        "0,5,1.0,2.0,10,10,1.5",
        "-1,5,1.0,2.0,10,10,0.5",
        "zero,5,1.0,2.0,10,10,0.5",
        "0,5,1.0,2.0,10,10",
        "0,1,1.0,2.0,10,10,0.5",
    ]
)
def test_bad_detection_rows(tmp_path, row):
    write_detections(tmp_path, 0, sample_frames())
    _rewrite_line(detection_file(tmp_path, 0), 3, row)

    with pytest.raises(ParseError) as exc_info:
        load_camera_detections(tmp_path, 0)

    assert exc_info.value.line == 4
    assert ":4:" in str(exc_info.value)

def test_bad_header(tmp_path):
    write_detections(tmp_path, 0, sample_frames())
    _rewrite_line(detection_file(tmp_path, 0), 0, "frame,id,x,y,w,h,score")

    with pytest.raises(ParseError) as exc_info:
        load_camera_detections(tmp_path, 0)

    assert exc_info.value.line == 1

def test_zero_feature_row(tmp_path):
    frames = sample_frames()
    write_detections(tmp_path, 0, frames)
    features = np.stack([box.feature for _, boxes in frames for box in boxes])
    features[1] = 0
    write_features(feature_file(tmp_path, 0), features)

    with pytest.raises(ParseError) as exc_info:
        load_camera_detections(tmp_path, 0)

    assert exc_info.value.line == 3

def _tracklet(track_id, boxes):
    return Tracklet(track_id, 0, boxes, boxes[0].feature)

def test_tracks_round_trip(tmp_path):
    frames = sample_frames()
    first, second = frames[0][1]
    frozen = DetBox(
        frame=1, rect=first.rect, score=first.score, feature=first.feature, det_id=-1, interp=True
    )
    tracklets = [_tracklet(1, [first, frozen, frames[1][1][0]]), _tracklet(4, [second])]

    write_tracks(tmp_path, 0, tracklets)
    restored = read_tracks(track_file(tmp_path, 0), 0, frames)

    assert [t.track_id for t in restored] == [1, 4]
    assert restored[0].frames == [0, 1, 2]
    assert [box.interp for box in restored[0].boxes] == [False, True, False]
    assert restored[0].boxes[1].det_id == -1
    np.testing.assert_array_equal(restored[0].boxes[1].feature, first.feature)
    assert restored[1].boxes[0].det_id == 1
    np.testing.assert_allclose(np.linalg.norm(restored[0].ema_feature), 1.0)

def test_tracks_must_match_detections(tmp_path):
    frames = sample_frames()
    moved = make_box(0, 0, 11.0, [1, 0, 0])
    write_tracks(tmp_path, 0, [_tracklet(1, [moved])])

    with pytest.raises(IntegrityError):
        read_tracks(track_file(tmp_path, 0), 0, frames)

def test_global_ids_round_trip(tmp_path):
    path = tmp_path / "global.csv"
    write_global_ids(path, {(1, 3): 2, (0, 7): 1})

    assert read_global_ids(path) == {(0, 7): 1, (1, 3): 2}

    path.write_text("camera_id,track_id,global_id\n0,7,1\n0,7,2\n")
    with pytest.raises(ParseError):
        read_global_ids(path)

def test_ground_truth_round_trip(tmp_path):
    ground_truth = Observations()
    ground_truth.add(0, 3, 1, Rect(0, 0, 10, 10))
    ground_truth.add(12, 4, 2, Rect(5.5, 0, 10, 10))

    write_ground_truth(tmp_path, ground_truth)
    restored = read_ground_truth(tmp_path)

    assert restored.frames == ground_truth.frames
    assert read_ground_truth(tmp_path, [12]).cameras == [12]

def test_topology_round_trip(tmp_path):
    scenario = generate_scenario(preset("decoy"))
    path = tmp_path / "topology.json"

    write_topology(path, scenario.topology)
    assert read_topology(path) == scenario.topology

    path.write_text("{not json")
    with pytest.raises(ConfigError):
        read_topology(path)

    with pytest.raises(ConfigError):
        read_topology(tmp_path / "missing.json")

    data = json.loads(scenario.topology.model_dump_json())
    data["links"][0]["zone_out"] = 1
    path.write_text(json.dumps(data))
    with pytest.raises(ConfigError):
        read_topology(path)

def test_write_scenario(tmp_path):
    scenario = generate_scenario(preset("decoy"))

    config_path = write_scenario(tmp_path / "scene", scenario)
    run = load_run_config(config_path)

    assert run.topology == (tmp_path / "scene").resolve() / "topology.json"
    assert run.output == (tmp_path / "scene").resolve() / "output"
    assert read_ground_truth(run.ground_truth).box_count() == scenario.ground_truth.box_count()

    frames = load_camera_detections(run.detections, 1)
    expected = [(frame, boxes) for frame, boxes in scenario.detections[1] if boxes]
    assert [frame for frame, _ in frames] == [frame for frame, _ in expected]
    assert [box.rect for _, boxes in frames for box in boxes] == [
        box.rect for _, boxes in expected for box in boxes
    ]
