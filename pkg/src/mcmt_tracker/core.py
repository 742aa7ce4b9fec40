import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Sequence

import cv2
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from shapely.geometry import LinearRing

from .errors import ConfigError, UsageError

# A frame of detections: (frame index, boxes detected in that frame).
Frame = tuple[int, list["DetBox"]]

@dataclass(frozen=True)
class Rect:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h)):
            raise UsageError(f"Rect coordinates must be finite, got {self}")
        if self.w <= 0 or self.h <= 0:
            raise UsageError(f"Rect width and height must be positive, got {self}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return self.x + self.w / 2, self.y + self.h / 2

    @property
    def anchor(self) -> tuple[float, float]:
        # Bottom-center: where the vehicle touches the road.
        return self.x + self.w / 2, self.y + self.h

    @property
    def diagonal(self) -> float:
        return math.hypot(self.w, self.h)

    def to_xyah(self) -> np.ndarray:
        cx, cy = self.center
        return np.array([cx, cy, self.w / self.h, self.h], dtype=np.float64)

    def intersection(self, other: "Rect") -> float:
        iw = min(self.x2, other.x2) - max(self.x, other.x)
        ih = min(self.y2, other.y2) - max(self.y, other.y)
        if iw <= 0 or ih <= 0:
            return 0.0

        return iw * ih

@dataclass(frozen=True, eq=False)
class DetBox:
    """
    One detection: frame index, rectangle, confidence and appearance feature.

    `interp` marks boxes emitted by the tracker itself (frozen stationary boxes),
    `occlusion` holds the box's occlusion rate among its co-temporal detections.
    """
    frame: int
    rect: Rect
    score: float
    feature: np.ndarray
    det_id: int = 0
    interp: bool = False
    occlusion: float = 0.0

    def __post_init__(self):
        if self.frame < 0:
            raise UsageError(f"Frame index must be non-negative, got {self.frame}")
        if not 0.0 <= self.score <= 1.0:
            raise UsageError(f"Detection score must be in [0, 1], got {self.score}")

        feature = np.array(self.feature, dtype=np.float32)
        if feature.ndim != 1 or feature.size == 0:
            raise UsageError("Feature must be a non-empty vector")
        if not np.all(np.isfinite(feature)):
            raise UsageError("Feature entries must be finite")

        feature.flags.writeable = False
        object.__setattr__(self, "feature", feature)

    @property
    def key(self) -> tuple[int, int]:
        return self.frame, self.det_id

    def __repr__(self):
        return (
            f"DetBox(frame={self.frame}, det_id={self.det_id}, rect={self.rect}, "
            f"score={self.score:.3f}, interp={self.interp})"
        )

@dataclass(eq=False)
class Tracklet:
    track_id: int
    camera_id: int
    boxes: list[DetBox]
    ema_feature: np.ndarray

    def __post_init__(self):
        if not self.boxes:
            raise UsageError("A tracklet needs at least one box")

        frames = [box.frame for box in self.boxes]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise UsageError(f"Tracklet {self.track_id} boxes are not strictly increasing in frame")

    @property
    def length(self) -> int:
        return len(self.boxes)

    @property
    def first_frame(self) -> int:
        return self.boxes[0].frame

    @property
    def last_frame(self) -> int:
        return self.boxes[-1].frame

    @property
    def frames(self) -> list[int]:
        return [box.frame for box in self.boxes]

    def append(self, box: DetBox):
        if box.frame <= self.last_frame:
            raise UsageError(
                f"Tracklet {self.track_id}: frame {box.frame} does not follow {self.last_frame}"
            )
        self.boxes.append(box)

    def feature_matrix(self) -> np.ndarray:
        return np.stack([box.feature for box in self.boxes]).astype(np.float64)

    def __repr__(self):
        return (
            f"Tracklet(camera={self.camera_id}, id={self.track_id}, "
            f"frames={self.first_frame}-{self.last_frame}, length={self.length})"
        )

class ZoneKind(str, Enum):
    ENTRY = "entry"
    EXIT = "exit"
    BOTH = "both"

class Zone(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    zone_id: int
    polygon: tuple[tuple[float, float], ...]
    kind: ZoneKind = ZoneKind.BOTH

    @field_validator("polygon")
    @classmethod
    def _check_polygon(cls, polygon):
        if len(polygon) < 3:
            raise ValueError("a zone polygon needs at least 3 vertices")
        if not all(math.isfinite(v) for vertex in polygon for v in vertex):
            raise ValueError("zone vertices must be finite")
        if not is_simple_polygon(polygon):
            raise ValueError("zone polygon must not self-intersect")

        return polygon

    def contains(self, point: tuple[float, float]) -> bool:
        return point_in_polygon(point, self.polygon)

    @property
    def allows_exit(self) -> bool:
        return self.kind in (ZoneKind.EXIT, ZoneKind.BOTH)

    @property
    def allows_entry(self) -> bool:
        return self.kind in (ZoneKind.ENTRY, ZoneKind.BOTH)

class CameraDescriptor(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    camera_id: int
    width: float = Field(gt=0)
    height: float = Field(gt=0)
    fps: float = Field(default=10.0, gt=0)
    zones: tuple[Zone, ...] = ()

    @field_validator("zones")
    @classmethod
    def _unique_zones(cls, zones):
        ids = [zone.zone_id for zone in zones]
        if len(ids) != len(set(ids)):
            raise ValueError("zone ids must be unique within a camera")

        return tuple(sorted(zones, key=lambda zone: zone.zone_id))

    @property
    def frame_shape(self) -> tuple[float, float]:
        return self.width, self.height

    def zone(self, zone_id: int) -> Zone:
        for zone in self.zones:
            if zone.zone_id == zone_id:
                return zone

        raise ConfigError(f"Camera {self.camera_id} has no zone {zone_id}")

class TopologyLink(BaseModel):
    """
    A valid (exit zone, entry zone) pair between two cameras.

    `t_out` and `t_in` are the frame thresholds for leaving the upstream and
    entering the downstream camera, `t_low`/`t_upp` bound the travel time in
    frames. `beta_t` scales the travel-time refinement; None means the window
    midpoint.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    cam_out: int
    zone_out: int
    cam_in: int
    zone_in: int
    t_out: int = Field(ge=0)
    t_in: int = Field(ge=0)
    t_low: float = Field(ge=0)
    t_upp: float = Field(ge=0)
    beta_t: float | None = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _check_window(self):
        if not self.t_low < self.t_upp:
            raise ValueError(f"t_low ({self.t_low}) must be below t_upp ({self.t_upp})")

        return self

    @property
    def name(self) -> str:
        return f"c{self.cam_out}z{self.zone_out}->c{self.cam_in}z{self.zone_in}"

    @property
    def expected_travel_time(self) -> float:
        if self.beta_t is not None:
            return self.beta_t

        return (self.t_low + self.t_upp) / 2

class CameraTopology(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    cameras: tuple[CameraDescriptor, ...]
    links: tuple[TopologyLink, ...] = ()

    @model_validator(mode="after")
    def _check_links(self):
        ids = [camera.camera_id for camera in self.cameras]
        if len(ids) != len(set(ids)):
            raise ValueError("camera ids must be unique")

        for link in self.links:
            out_camera = self.camera(link.cam_out)
            in_camera = self.camera(link.cam_in)
            if not out_camera.zone(link.zone_out).allows_exit:
                raise ValueError(f"link {link.name}: zone {link.zone_out} is not an exit zone")
            if not in_camera.zone(link.zone_in).allows_entry:
                raise ValueError(f"link {link.name}: zone {link.zone_in} is not an entry zone")

        return self

    @property
    def camera_ids(self) -> list[int]:
        return sorted(camera.camera_id for camera in self.cameras)

    def camera(self, camera_id: int) -> CameraDescriptor:
        for camera in self.cameras:
            if camera.camera_id == camera_id:
                return camera

        raise ConfigError(f"Unknown camera {camera_id}")

def _as_vector(values) -> np.ndarray:
    vector = np.asarray(values, dtype=np.float64)
    if vector.ndim != 1 or vector.size == 0:
        raise UsageError("Features must be non-empty vectors")

    return vector

def cosine_distance(a, b) -> float:
    a = _as_vector(a)
    b = _as_vector(b)
    if a.shape != b.shape:
        raise UsageError(f"Feature dimensions differ: {a.size} vs {b.size}")

    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0 or norm_b == 0:
        raise UsageError("Cosine distance is undefined for a zero vector")

    similarity = np.dot(a, b) / (norm_a * norm_b)
    return float(np.clip(1.0 - similarity, 0.0, 2.0))

def normalize_rows(matrix) -> np.ndarray:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise UsageError("Cannot normalize a zero feature vector")

    return matrix / norms

def cosine_matrix(a, b) -> np.ndarray:
    """
    Pairwise 1 - cos between the rows of `a` and the rows of `b`.
    """
    a = normalize_rows(a)
    b = normalize_rows(b)
    if a.shape[1] != b.shape[1]:
        raise UsageError(f"Feature dimensions differ: {a.shape[1]} vs {b.shape[1]}")

    return np.clip(1.0 - a @ b.T, 0.0, 2.0)

def iou(a: Rect, b: Rect) -> float:
    inter = a.intersection(b)
    if inter == 0.0:
        return 0.0

    return inter / (a.area + b.area - inter)

def occlusion_rate(box: DetBox, others: Iterable[DetBox]) -> float:
    rate = 0.0
    for other in others:
        if other is box:
            continue
        if other.frame != box.frame:
            raise UsageError("Occlusion rate needs co-temporal boxes")

        rate = max(rate, box.rect.intersection(other.rect) / box.rect.area)

    return min(rate, 1.0)

def annotate_occlusion(frames: Sequence[Frame]) -> list[Frame]:
    annotated = []
    for frame, boxes in frames:
        annotated.append(
            (frame, [replace(box, occlusion=occlusion_rate(box, boxes)) for box in boxes])
        )

    return annotated

def point_in_polygon(point: tuple[float, float], polygon: Sequence[tuple[float, float]]) -> bool:
    """
    Closed point-in-polygon test: points on an edge or vertex are inside.
    """
    contour = np.asarray(polygon, dtype=np.float32).reshape(-1, 1, 2)
    return cv2.pointPolygonTest(contour, (float(point[0]), float(point[1])), False) >= 0

def is_simple_polygon(polygon: Sequence[tuple[float, float]]) -> bool:
    if len(set(polygon)) != len(polygon):
        return False

    return LinearRing(polygon).is_simple

def box_in_zone(box: DetBox, zone: Zone) -> bool:
    return zone.contains(box.rect.anchor)

def zone_of(box: DetBox, zones: Iterable[Zone]) -> int | None:
    for zone in sorted(zones, key=lambda zone: zone.zone_id):
        if box_in_zone(box, zone):
            return zone.zone_id

    return None
