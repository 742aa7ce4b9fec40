"""
Reading and writing of detection, feature, tracking, ground-truth and
topology files.

Detections are stored per camera as a comma-separated table
`c<cam>_det.csv` (frame,det_id,x,y,w,h,score) next to a binary feature
matrix `c<cam>_feat.bin`: an 8 byte header holding the row count and the
dimension as little-endian 32 bit unsigned ints, followed by the rows as
little-endian 32 bit floats in table order.
"""
import csv
import json
import os
from dataclasses import replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from loguru import logger

from .config import build_model
from .core import CameraTopology, DetBox, Frame, Rect, Tracklet, annotate_occlusion
from .errors import ConfigError, IntegrityError, ParseError, UsageError
from .evaluation import Observations

DETECTION_COLUMNS = ("frame", "det_id", "x", "y", "w", "h", "score")
TRACK_COLUMNS = ("frame", "track_id", "x", "y", "w", "h", "score", "interp")
GLOBAL_COLUMNS = ("camera_id", "track_id", "global_id")
GT_COLUMNS = ("frame", "gt_id", "x", "y", "w", "h")

FEATURE_HEADER = np.dtype("<u4")
FEATURE_DTYPE = np.dtype("<f4")

TOPOLOGY_FILE = "topology.json"
GLOBAL_FILE = "global.csv"
RUN_CONFIG_FILE = "run.json"

def detection_file(folder: str | os.PathLike, camera: int) -> Path:
    return Path(folder) / f"c{camera:03d}_det.csv"

def feature_file(folder: str | os.PathLike, camera: int) -> Path:
    return Path(folder) / f"c{camera:03d}_feat.bin"

def track_file(folder: str | os.PathLike, camera: int) -> Path:
    return Path(folder) / f"c{camera:03d}_tracks.csv"

def gt_file(folder: str | os.PathLike, camera: int) -> Path:
    return Path(folder) / f"c{camera:03d}_gt.csv"

def _format(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        # repr keeps every bit of the float.
        return repr(float(value))

    return str(value)

def _write_table(path: Path, columns: Sequence[str], rows: Iterable[Sequence]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format(value) for value in row])

def _read_table(path: Path, columns: Sequence[str]):
    """
    Yield (line number, row dict) for every data row of a table.
    """
    try:
        fp = open(path, "r", encoding="utf-8", newline="")
    except FileNotFoundError:
        raise ParseError("file does not exist", str(path))

    with fp:
        reader = csv.reader(fp)
        header = next(reader, None)
        if header is None:
            raise ParseError("missing header row", str(path), 1)
        if tuple(name.strip() for name in header) != tuple(columns):
            raise ParseError(
                f"expected columns {','.join(columns)}, got {','.join(header)}", str(path), 1
            )

        for row in reader:
            line = reader.line_num
            if not row or all(not value.strip() for value in row):
                continue
            if len(row) != len(columns):
                raise ParseError(f"expected {len(columns)} fields, got {len(row)}", str(path), line)

            yield line, dict(zip(columns, (value.strip() for value in row)))

def _parse_int(value: str, name: str, path: Path, line: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise ParseError(f"'{name}' is not an integer: '{value}'", str(path), line)

def _parse_float(value: str, name: str, path: Path, line: int) -> float:
    try:
        number = float(value)
    except ValueError:
        raise ParseError(f"'{name}' is not a number: '{value}'", str(path), line)

    if not np.isfinite(number):
        raise ParseError(f"'{name}' must be finite, got {value}", str(path), line)

    return number

def _parse_rect(row: dict, path: Path, line: int) -> Rect:
    x, y, w, h = (_parse_float(row[key], key, path, line) for key in ("x", "y", "w", "h"))
    if w <= 0 or h <= 0:
        raise ParseError(f"box size must be positive, got w={w}, h={h}", str(path), line)

    return Rect(x, y, w, h)

def write_features(path: str | os.PathLike, features: np.ndarray):
    features = np.asarray(features, dtype=FEATURE_DTYPE)
    if features.ndim != 2:
        raise UsageError("Feature matrix must be two-dimensional")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fp:
        fp.write(np.array(features.shape, dtype=FEATURE_HEADER).tobytes())
        fp.write(np.ascontiguousarray(features).tobytes())

def read_features(path: str | os.PathLike) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise ParseError("file does not exist", str(path))

    header_size = 2 * FEATURE_HEADER.itemsize
    if len(data) < header_size:
        raise IntegrityError(f"{path}: feature file header is truncated")

    rows, dim = (int(value) for value in np.frombuffer(data[:header_size], dtype=FEATURE_HEADER))
    expected = rows * dim * FEATURE_DTYPE.itemsize
    if len(data) - header_size != expected:
        raise IntegrityError(
            f"{path}: header announces {rows}x{dim} features ({expected} bytes), "
            f"file holds {len(data) - header_size} bytes"
        )

    return np.frombuffer(data[header_size:], dtype=FEATURE_DTYPE).reshape(rows, dim).copy()

def write_detections(folder: str | os.PathLike, camera: int, frames: Sequence[Frame]):
    boxes = [box for _, frame_boxes in frames for box in frame_boxes]
    rows = [
        (box.frame, box.det_id, box.rect.x, box.rect.y, box.rect.w, box.rect.h, box.score)
        for box in boxes
    ]
    _write_table(detection_file(folder, camera), DETECTION_COLUMNS, rows)

    if boxes:
        features = np.stack([box.feature for box in boxes])
    else:
        features = np.zeros((0, 0), dtype=FEATURE_DTYPE)

    write_features(feature_file(folder, camera), features)

def load_detections(table_path: str | os.PathLike, feature_path: str | os.PathLike) -> list[Frame]:
    """
    Read one camera's detection table and feature matrix.

    :returns:   (frame, boxes) per frame holding detections, ordered by frame,
                boxes in file order
    """
    table_path = Path(table_path)
    features = read_features(feature_path)

    entries = []
    seen = set()
    for line, row in _read_table(table_path, DETECTION_COLUMNS):
        frame = _parse_int(row["frame"], "frame", table_path, line)
        det_id = _parse_int(row["det_id"], "det_id", table_path, line)
        rect = _parse_rect(row, table_path, line)
        score = _parse_float(row["score"], "score", table_path, line)

        if frame < 0:
            raise ParseError(f"frame must be non-negative, got {frame}", str(table_path), line)
        if not 0.0 <= score <= 1.0:
            raise ParseError(f"score must be in [0, 1], got {score}", str(table_path), line)
        if (frame, det_id) in seen:
            raise ParseError(f"duplicate detection {det_id} in frame {frame}", str(table_path), line)

        seen.add((frame, det_id))
        entries.append((line, frame, det_id, rect, score))

    if len(entries) != features.shape[0]:
        raise IntegrityError(
            f"{table_path} holds {len(entries)} detections but {feature_path} "
            f"holds {features.shape[0]} feature rows"
        )

    by_frame: dict[int, list[DetBox]] = {}
    for (line, frame, det_id, rect, score), feature in zip(entries, features):
        if not np.all(np.isfinite(feature)) or not np.any(feature):
            raise ParseError(
                f"feature row for detection {det_id} in frame {frame} must be finite and non-zero",
                str(table_path),
                line
            )

        by_frame.setdefault(frame, []).append(
            DetBox(frame=frame, rect=rect, score=score, feature=feature, det_id=det_id)
        )

    return [(frame, by_frame[frame]) for frame in sorted(by_frame)]

def load_camera_detections(folder: str | os.PathLike, camera: int) -> list[Frame]:
    return load_detections(detection_file(folder, camera), feature_file(folder, camera))

def write_tracks(folder: str | os.PathLike, camera: int, tracklets: Sequence[Tracklet]):
    rows = [
        (box.frame, tracklet.track_id, box.rect.x, box.rect.y, box.rect.w, box.rect.h, box.score, box.interp)
        for tracklet in sorted(tracklets, key=lambda tracklet: tracklet.track_id)
        for box in tracklet.boxes
    ]
    _write_table(track_file(folder, camera), TRACK_COLUMNS, rows)

def _rect_key(frame: int, rect: Rect) -> tuple:
    return frame, rect.x, rect.y, rect.w, rect.h

def _interp_source(frame: int, rect: Rect, real_boxes: list[DetBox]) -> DetBox:
    same = [real for real in real_boxes if real.frame < frame and real.rect == rect]
    if same:
        return same[-1]

    return min(real_boxes, key=lambda real: (abs(real.frame - frame), real.frame))

def read_tracks(path: str | os.PathLike, camera: int, frames: Sequence[Frame]) -> list[Tracklet]:
    """
    Read a tracking output file and join every row with its detection in
    `frames` to restore features. Frozen rows take the feature of the box
    they were frozen on.
    """
    path = Path(path)
    detections = {
        _rect_key(box.frame, box.rect): box
        for _, boxes in annotate_occlusion(frames)
        for box in boxes
    }

    rows: dict[int, list[tuple[int, DetBox | None, Rect, float]]] = {}
    for line, row in _read_table(path, TRACK_COLUMNS):
        frame = _parse_int(row["frame"], "frame", path, line)
        track_id = _parse_int(row["track_id"], "track_id", path, line)
        rect = _parse_rect(row, path, line)
        score = _parse_float(row["score"], "score", path, line)
        interp = _parse_int(row["interp"], "interp", path, line)
        if interp not in (0, 1):
            raise ParseError(f"interp must be 0 or 1, got {interp}", str(path), line)

        detection = None
        if not interp:
            detection = detections.get(_rect_key(frame, rect))
            if detection is None:
                raise IntegrityError(f"{path}:{line}: no detection matches the tracked box")

        rows.setdefault(track_id, []).append((frame, detection, rect, score))

    tracklets = []
    for track_id in sorted(rows):
        entries = sorted(rows[track_id], key=lambda entry: entry[0])
        real_boxes = [detection for _, detection, _, _ in entries if detection is not None]
        if not real_boxes:
            raise IntegrityError(f"{path}: track {track_id} holds no detected box")

        boxes = []
        for frame, detection, rect, score in entries:
            if detection is None:
                source = _interp_source(frame, rect, real_boxes)
                detection = replace(source, frame=frame, rect=rect, score=score, det_id=-1, interp=True)
            boxes.append(detection)

        ema = np.mean([box.feature for box in real_boxes], axis=0)
        tracklets.append(
            Tracklet(
                track_id=track_id,
                camera_id=camera,
                boxes=boxes,
                ema_feature=ema / np.linalg.norm(ema),
            )
        )

    return tracklets

def write_global_ids(path: str | os.PathLike, global_ids: Mapping[tuple[int, int], int]):
    rows = [(camera, track_id, global_id) for (camera, track_id), global_id in sorted(global_ids.items())]
    _write_table(Path(path), GLOBAL_COLUMNS, rows)

def read_global_ids(path: str | os.PathLike) -> dict[tuple[int, int], int]:
    path = Path(path)
    global_ids = {}
    for line, row in _read_table(path, GLOBAL_COLUMNS):
        key = (
            _parse_int(row["camera_id"], "camera_id", path, line),
            _parse_int(row["track_id"], "track_id", path, line),
        )
        if key in global_ids:
            raise ParseError(f"duplicate tracklet {key}", str(path), line)

        global_ids[key] = _parse_int(row["global_id"], "global_id", path, line)

    return global_ids

def write_ground_truth(folder: str | os.PathLike, ground_truth: Observations):
    for camera in ground_truth.cameras:
        per_frame = ground_truth.frames[camera]
        rows = [
            (frame, identity, rect.x, rect.y, rect.w, rect.h)
            for frame in sorted(per_frame)
            for identity, rect in per_frame[frame]
        ]
        _write_table(gt_file(folder, camera), GT_COLUMNS, rows)

def read_ground_truth(folder: str | os.PathLike, cameras: Iterable[int] | None = None) -> Observations:
    folder = Path(folder)
    if cameras is None:
        cameras = sorted(int(path.name[1:4]) for path in folder.glob("c[0-9][0-9][0-9]_gt.csv"))

    ground_truth = Observations()
    for camera in cameras:
        path = gt_file(folder, camera)
        for line, row in _read_table(path, GT_COLUMNS):
            frame = _parse_int(row["frame"], "frame", path, line)
            identity = _parse_int(row["gt_id"], "gt_id", path, line)
            rect = _parse_rect(row, path, line)
            try:
                ground_truth.add(camera, frame, identity, rect)
            except UsageError as exc:
                raise ParseError(str(exc), str(path), line)

    return ground_truth

def write_topology(path: str | os.PathLike, topology: CameraTopology):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(topology.model_dump_json(indent=2) + "\n", encoding="utf-8")

def read_topology(path: str | os.PathLike) -> CameraTopology:
    try:
        with open(path, "r", encoding="utf-8") as fp:
            data = json.load(fp)
    except FileNotFoundError:
        raise ConfigError(f"Topology file '{path}' does not exist")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"Topology file '{path}' is not valid JSON: {exc}")

    return build_model(CameraTopology, data, f"topology '{path}'")

def write_scenario(folder: str | os.PathLike, scenario) -> Path:
    """
    Write a generated scenario as a runnable input folder: topology,
    per-camera detections, ground truth and a run config pointing at them.

    :returns:   Path of the written run config
    """
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)

    write_topology(folder / TOPOLOGY_FILE, scenario.topology)
    for camera, frames in sorted(scenario.detections.items()):
        write_detections(folder / "detections", camera, frames)

    (folder / "gt").mkdir(exist_ok=True)
    write_ground_truth(folder / "gt", scenario.ground_truth)

    run_config = {
        "topology": TOPOLOGY_FILE,
        "detections": "detections",
        "output": "output",
        "ground_truth": "gt",
    }
    config_path = folder / RUN_CONFIG_FILE
    config_path.write_text(json.dumps(run_config, indent=2) + "\n", encoding="utf-8")

    logger.info(
        f"Wrote scenario with {len(scenario.detections)} cameras "
        f"and {scenario.total_frames} frames to '{folder}'"
    )

    return config_path
