"""
Synthetic corridor scenarios.

Cameras are laid out along a road. Every vehicle crosses each camera from
left to right on its own lane, entering through zone 1 and leaving through
zone 2, then reaches the next camera after a travel time drawn inside the
link window. Each vehicle owns a unit identity vector and every detection
carries a noisy copy of it. Lanes closer than the box height overlap, and
a vehicle hidden behind a nearer one picks up part of its appearance.
"""
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .core import CameraDescriptor, CameraTopology, DetBox, Frame, Rect, TopologyLink, Zone, ZoneKind
from .config import build_model
from .errors import ConfigError
from .evaluation import Observations

ENTRY_ZONE = 1
EXIT_ZONE = 2

# Width of the entry and exit zones relative to the frame width.
ZONE_FRACTION = 0.15

class StopEvent(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    camera: int = Field(ge=0)
    vehicle: int = Field(ge=0)
    at: int = Field(ge=0)
    duration: int = Field(ge=1)
    ramp: int = Field(default=10, ge=1)

class OcclusionEvent(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    camera: int = Field(ge=0)
    vehicle: int = Field(ge=0)
    start: int = Field(ge=0)
    length: int = Field(ge=1)
    mode: Literal["drop", "low_score"] = "drop"

class ScenarioConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = 0
    cameras: int = Field(default=3, ge=1)
    width: float = Field(default=1280.0, gt=0)
    height: float = Field(default=720.0, gt=0)
    fps: float = Field(default=10.0, gt=0)
    vehicles: int = Field(default=10, ge=0)
    decoys: int = Field(default=0, ge=0)
    feature_dim: int = Field(default=64, ge=2)
    sigma: float = Field(default=0.05, ge=0)
    speed_min: float = Field(default=8.0, gt=0)
    speed_max: float = Field(default=12.0, gt=0, le=15)
    box_width: float = Field(default=100.0, gt=0)
    box_height: float = Field(default=60.0, gt=0)
    lanes: int = Field(default=9, ge=1)
    first_lane: float = Field(default=120.0, gt=0)
    lane_spacing: float = Field(default=70.0, gt=0)
    lane_margin: int = Field(default=5, ge=0)
    departure_gap: int = Field(default=30, ge=1)
    t_low: int = Field(default=20, ge=0)
    t_upp: int = Field(default=60, ge=1)
    jitter: float = Field(default=0.5, ge=0)
    score_min: float = Field(default=0.7, ge=0, le=1)
    score_max: float = Field(default=0.95, ge=0, le=1)
    low_score: float = Field(default=0.1, ge=0, le=1)
    high_score: float = Field(default=0.6, ge=0, le=1)
    occlusion_fraction: float = Field(default=0.0, ge=0, lt=1)
    low_confidence_onset: int = Field(default=0, ge=0)
    similar_pairs: int = Field(default=0, ge=0)
    similar_gap: float = Field(default=0.08, gt=0, lt=1)
    occluder_blend: float = Field(default=1.0, ge=0, le=1)
    stops: tuple[StopEvent, ...] = ()
    occlusions: tuple[OcclusionEvent, ...] = ()

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.speed_min > self.speed_max:
            raise ValueError("speed_min must not exceed speed_max")
        if self.score_min > self.score_max:
            raise ValueError("score_min must not exceed score_max")
        if self.t_upp - self.t_low < 2:
            raise ValueError("the travel window (t_low, t_upp) must hold at least one frame")
        if not self.low_score < self.high_score:
            raise ValueError("low_score must be below high_score")

        return self

@dataclass
class Visit:
    vehicle: int
    camera: int
    start: int
    positions: list[float]
    lane: int = -1

    @property
    def end(self) -> int:
        return self.start + len(self.positions) - 1

@dataclass
class Scenario:
    config: ScenarioConfig
    topology: CameraTopology
    detections: dict[int, list[Frame]]
    ground_truth: Observations
    total_frames: int
    visits: list[Visit] = field(default_factory=list)

def build_topology(config: ScenarioConfig, total_frames: int) -> CameraTopology:
    width, height = config.width, config.height
    zone_width = ZONE_FRACTION * width
    zones = (
        Zone(
            zone_id=ENTRY_ZONE,
            polygon=((0.0, 0.0), (zone_width, 0.0), (zone_width, height), (0.0, height)),
            kind=ZoneKind.ENTRY,
        ),
        Zone(
            zone_id=EXIT_ZONE,
            polygon=((width - zone_width, 0.0), (width, 0.0), (width, height), (width - zone_width, height)),
            kind=ZoneKind.EXIT,
        ),
    )
    cameras = tuple(
        CameraDescriptor(camera_id=camera, width=width, height=height, fps=config.fps, zones=zones)
        for camera in range(config.cameras)
    )
    links = tuple(
        TopologyLink(
            cam_out=camera,
            zone_out=EXIT_ZONE,
            cam_in=camera + 1,
            zone_in=ENTRY_ZONE,
            t_out=max(total_frames - config.t_low, 0),
            t_in=config.t_low,
            t_low=config.t_low,
            t_upp=config.t_upp,
        )
        for camera in range(config.cameras - 1)
    )

    return CameraTopology(cameras=cameras, links=links)

def identity_vectors(rng: np.random.Generator, count: int, dim: int, similar_pairs: int = 0, similar_gap: float = 0.08) -> np.ndarray:
    """
    Orthonormal identity vectors, one row per vehicle. The first
    `similar_pairs` pairs of rows are bent towards each other so that their
    cosine distance equals `similar_gap`.
    """
    if count > dim:
        raise ConfigError(f"Cannot draw {count} orthogonal identities in {dim} dimensions")
    if count == 0:
        return np.zeros((0, dim))

    basis, _ = np.linalg.qr(rng.standard_normal((dim, count)))
    identities = basis.T.copy()

    cos = 1.0 - similar_gap
    sin = np.sqrt(1.0 - cos ** 2)
    for pair in range(min(similar_pairs, count // 2)):
        first, second = 2 * pair, 2 * pair + 1
        identities[second] = cos * identities[first] + sin * identities[second]

    return identities

def _speed_factor(offset: int, stop: StopEvent | None) -> float:
    if stop is None:
        return 1.0

    if offset < stop.at - stop.ramp:
        return 1.0
    if offset < stop.at:
        return (stop.at - offset) / stop.ramp
    if offset < stop.at + stop.duration:
        return 0.0
    if offset < stop.at + stop.duration + stop.ramp:
        return (offset - stop.at - stop.duration + 1) / stop.ramp

    return 1.0

def crossing_positions(config: ScenarioConfig, speed: float, stop: StopEvent | None = None) -> list[float]:
    """
    Left edge of the box in every frame of one camera crossing.
    """
    limit = config.width - config.box_width
    positions = [0.0]
    offset = 0
    while True:
        step = speed * _speed_factor(offset, stop)
        if positions[-1] + step > limit:
            break

        positions.append(positions[-1] + step)
        offset += 1

    return positions

def _assign_lanes(visits: list[Visit], config: ScenarioConfig):
    for camera in range(config.cameras):
        free_at = [0] * config.lanes
        camera_visits = sorted(
            (visit for visit in visits if visit.camera == camera),
            key=lambda visit: (visit.start, visit.vehicle)
        )
        for visit in camera_visits:
            lane = next((index for index, frame in enumerate(free_at) if frame <= visit.start), None)
            if lane is None:
                raise ConfigError(
                    f"Camera {camera}: no free lane for vehicle {visit.vehicle} at frame {visit.start}"
                )

            visit.lane = lane
            free_at[lane] = visit.end + config.lane_margin + 1

def _check_events(config: ScenarioConfig):
    events = list(config.stops) + list(config.occlusions)
    for event in events:
        if event.camera >= config.cameras:
            raise ConfigError(f"Event {event} references unknown camera {event.camera}")
        if event.vehicle >= config.vehicles:
            raise ConfigError(f"Event {event} references unknown vehicle {event.vehicle}")

    lowest_lane = config.first_lane + (config.lanes - 1) * config.lane_spacing
    if config.first_lane < config.box_height or lowest_lane > config.height:
        raise ConfigError("Lanes do not fit into the frame")

def _schedule(config: ScenarioConfig, rng: np.random.Generator) -> tuple[list[Visit], int]:
    stops = {(stop.camera, stop.vehicle): stop for stop in config.stops}

    visits = []
    departure = 0
    for vehicle in range(config.vehicles):
        start = departure
        for camera in range(config.cameras):
            speed = rng.uniform(config.speed_min, config.speed_max)
            positions = crossing_positions(config, speed, stops.get((camera, vehicle)))
            visit = Visit(vehicle, camera, start, positions)
            visits.append(visit)

            start = visit.end + int(rng.integers(config.t_low + 1, config.t_upp))

        departure += max(1, int(round(config.departure_gap * rng.uniform(0.75, 1.25))))

    last_end = max((visit.end for visit in visits), default=0)
    total_frames = last_end + 1 + config.t_upp

    for decoy in range(config.decoys):
        # Leaves the first camera too late to reach the next one in time.
        positions = crossing_positions(config, rng.uniform(config.speed_min, config.speed_max))
        end = total_frames - 1 - int(rng.integers(0, max(config.t_low // 2, 1)))
        start = end - len(positions) + 1
        if start < 0:
            raise ConfigError("Scenario is too short to place a decoy vehicle")

        visits.append(Visit(config.vehicles + decoy, 0, start, positions))

    return visits, total_frames

def _truth_rects(visit: Visit, config: ScenarioConfig) -> list[Rect]:
    top = config.first_lane + visit.lane * config.lane_spacing - config.box_height
    return [Rect(left, top, config.box_width, config.box_height) for left in visit.positions]

def _occluders(visits: list[Visit], footprints: dict[tuple[int, int], list[Rect]]) -> dict[tuple[int, int, int], tuple[int, float]]:
    """
    For every (camera, vehicle, frame) partly hidden behind another vehicle,
    the nearer vehicle covering most of it and the covered fraction.
    Vehicles lower in the image are nearer to the camera.
    """
    on_screen = defaultdict(list)
    for visit in visits:
        for offset, rect in enumerate(footprints[(visit.camera, visit.vehicle)]):
            on_screen[(visit.camera, visit.start + offset)].append((visit.vehicle, rect))

    hidden = {}
    for (camera, frame), present in on_screen.items():
        for vehicle, rect in present:
            best = None
            for other, other_rect in present:
                if other_rect.y2 <= rect.y2:
                    continue

                rate = rect.intersection(other_rect) / rect.area
                if rate > 0 and (best is None or rate > best[1]):
                    best = (other, rate)

            if best is not None:
                hidden[(camera, vehicle, frame)] = best

    return hidden

def _blend(own: np.ndarray, occluder: np.ndarray, weight: float) -> np.ndarray:
    mixed = (1.0 - weight) * own + weight * occluder
    return mixed / np.linalg.norm(mixed)

def _noisy_feature(rng: np.random.Generator, identity: np.ndarray, sigma: float) -> np.ndarray:
    feature = identity + sigma * rng.standard_normal(identity.shape[0]) / np.sqrt(identity.shape[0])
    return (feature / np.linalg.norm(feature)).astype(np.float32)

def generate_scenario(config: ScenarioConfig) -> Scenario:
    _check_events(config)

    rng = np.random.default_rng(config.seed)
    identities = identity_vectors(
        rng, config.vehicles + config.decoys, config.feature_dim, config.similar_pairs, config.similar_gap
    )
    visits, total_frames = _schedule(config, rng)
    _assign_lanes(visits, config)

    occlusions = {}
    for event in config.occlusions:
        for offset in range(event.start, event.start + event.length):
            occlusions[(event.camera, event.vehicle, offset)] = event.mode

    ground_truth = Observations()
    per_camera: dict[int, dict[int, list[DetBox]]] = {camera: {} for camera in range(config.cameras)}
    mid_score = (config.low_score + 0.05, config.high_score)

    footprints = {(visit.camera, visit.vehicle): _truth_rects(visit, config) for visit in visits}
    hidden = _occluders(visits, footprints)

    for visit in sorted(visits, key=lambda visit: (visit.camera, visit.vehicle)):
        degraded = rng.random(len(visit.positions)) < config.occlusion_fraction

        for offset, truth in enumerate(footprints[(visit.camera, visit.vehicle)]):
            frame = visit.start + offset
            ground_truth.add(visit.camera, frame, visit.vehicle + 1, truth)

            mode = occlusions.get((visit.camera, visit.vehicle, offset))
            if mode == "drop":
                continue

            score = rng.uniform(config.score_min, config.score_max)
            sigma = config.sigma
            if offset < config.low_confidence_onset or degraded[offset]:
                score = rng.uniform(*mid_score)
            if degraded[offset] or mode == "low_score":
                sigma *= 2
            if mode == "low_score":
                score = config.low_score + 0.05

            jitter = config.jitter * rng.standard_normal(2)
            rect = Rect(truth.x + jitter[0], truth.y + jitter[1], config.box_width, config.box_height)

            identity = identities[visit.vehicle]
            occluder = hidden.get((visit.camera, visit.vehicle, frame))
            if occluder is not None:
                front, rate = occluder
                identity = _blend(identity, identities[front], config.occluder_blend * rate)
            feature = _noisy_feature(rng, identity, sigma)

            per_camera[visit.camera].setdefault(frame, []).append(
                DetBox(frame=frame, rect=rect, score=float(score), feature=feature)
            )

    detections = {}
    for camera, by_frame in per_camera.items():
        frames = []
        for frame in range(total_frames):
            boxes = [
                DetBox(frame=box.frame, rect=box.rect, score=box.score, feature=box.feature, det_id=index)
                for index, box in enumerate(by_frame.get(frame, []))
            ]
            frames.append((frame, boxes))
        detections[camera] = frames

    logger.debug(
        f"Generated scenario: {config.vehicles} vehicles, {config.decoys} decoys, "
        f"{config.cameras} cameras, {total_frames} frames"
    )

    return Scenario(
        config=config,
        topology=build_topology(config, total_frames),
        detections=detections,
        ground_truth=ground_truth,
        total_frames=total_frames,
        visits=visits,
    )

def _stop_and_go_events(vehicles: list[int], camera: int = 0):
    stops = tuple(StopEvent(camera=camera, vehicle=vehicle, at=60, duration=50) for vehicle in vehicles)
    occlusions = tuple(
        OcclusionEvent(camera=camera, vehicle=vehicle, start=75, length=20, mode="drop")
        for vehicle in vehicles
    )
    return stops, occlusions

def _split_events(vehicles: list[int], camera: int = 0):
    return tuple(
        OcclusionEvent(camera=camera, vehicle=vehicle, start=40, length=40, mode="drop")
        for vehicle in vehicles
    )

def preset(name: str, seed: int = 0, **overrides) -> ScenarioConfig:
    """
    Named scenario configurations. Keyword overrides replace preset fields.
    """
    if name == "clean":
        settings = dict(vehicles=10, cameras=3, sigma=0.05)
    elif name == "noisy":
        settings = dict(vehicles=10, cameras=3, sigma=0.15, occlusion_fraction=0.3)
    elif name == "stop_and_go":
        stops, occlusions = _stop_and_go_events(list(range(4)))
        settings = dict(vehicles=4, cameras=2, stops=stops, occlusions=occlusions)
    elif name == "occlusion_split":
        settings = dict(vehicles=4, cameras=2, occlusions=_split_events(list(range(4))))
    elif name == "low_confidence_onset":
        settings = dict(vehicles=3, cameras=2, low_confidence_onset=10)
    elif name == "similar_appearance":
        # Near-identical vehicles leaving together on overlapping lanes, at
        # speeds far enough apart to give tracklets of unequal length.
        settings = dict(
            vehicles=2,
            cameras=2,
            sigma=0.15,
            similar_pairs=1,
            similar_gap=0.03,
            departure_gap=1,
            lane_spacing=15.0,
            speed_min=6.0,
            speed_max=14.0,
        )
    elif name == "decoy":
        settings = dict(vehicles=2, cameras=2, decoys=1)
    elif name == "scmt_ablation":
        stops, stop_occlusions = _stop_and_go_events([0, 2])
        settings = dict(
            vehicles=4,
            cameras=2,
            stops=stops,
            occlusions=stop_occlusions + _split_events([1, 3]),
        )
    else:
        raise ConfigError(f"Unknown scenario preset '{name}'")

    settings.update(overrides)
    settings["seed"] = seed
    return build_model(ScenarioConfig, settings, "scenario preset")

PRESETS = (
    "clean",
    "noisy",
    "stop_and_go",
    "occlusion_split",
    "low_confidence_onset",
    "similar_appearance",
    "decoy",
    "scmt_ablation",
)
