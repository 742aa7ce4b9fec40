"""
Location-aware single-camera tracking.

Detections are associated in two BYTE-style stages per frame: confident
detections against every live track on a fused appearance + motion cost,
then mid-confidence detections against the leftovers on motion alone.
Stationary vehicles are pinned in place while their detections are missing,
and two offline passes complete the result: the sequence is tracked a second
time in reverse to recover trajectory endpoints, and tracklets broken in the
middle of the scene are re-linked by appearance.
"""
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np
from loguru import logger

from .config import TrackerConfig
from .core import (
    DetBox,
    Frame,
    Tracklet,
    Zone,
    annotate_occlusion,
    cosine_distance,
    cosine_matrix,
    iou,
    normalize_rows,
)
from .errors import UsageError
from .matching import linear_assignment
from .motion import KalmanBoxFilter, MotionState

class TrackState(str, Enum):
    ACTIVE = "active"
    LOST = "lost"
    FINISHED = "finished"

@dataclass(eq=False)
class Track:
    tracklet: Tracklet
    motion: MotionState
    motion_frame: int
    last_real_frame: int
    state: TrackState = TrackState.ACTIVE

    @property
    def track_id(self) -> int:
        return self.tracklet.track_id

    def real_boxes(self) -> list[DetBox]:
        return [box for box in self.tracklet.boxes if not box.interp]

@dataclass
class TrackSet:
    active: list[Track] = field(default_factory=list)
    lost: list[Track] = field(default_factory=list)
    finished: list[Track] = field(default_factory=list)
    last_frame: int = -1
    next_id: int = 1

    @property
    def live(self) -> list[Track]:
        return sorted(self.active + self.lost, key=lambda track: track.track_id)

def fuse_cost(appearance, motion, appearance_weight: float):
    """
    Weighted sum of appearance distance and normalized motion distance.
    """
    return appearance_weight * appearance + (1.0 - appearance_weight) * motion

def _unit(vector) -> np.ndarray:
    return normalize_rows(vector)[0]

def _check_det_ids(frame: int, dets: Sequence[DetBox]):
    # Bidirectional tracking keys boxes by (frame, det_id).
    ids = [det.det_id for det in dets]
    if len(ids) != len(set(ids)):
        raise UsageError(f"Frame {frame}: detection ids are not unique")

def densify(frames: Sequence[Frame]) -> list[Frame]:
    """
    Fill missing frame indices between the first and last frame with empty lists.
    """
    frames = list(frames)
    for (prev, _), (curr, _) in zip(frames, frames[1:]):
        if curr <= prev:
            raise UsageError(f"Frames must be strictly increasing, got {curr} after {prev}")
    for frame, dets in frames:
        _check_det_ids(frame, dets)

    if not frames:
        return []

    by_index = dict(frames)
    first, last = frames[0][0], frames[-1][0]
    return [(index, list(by_index.get(index, []))) for index in range(first, last + 1)]

def is_stationary(boxes: Sequence[DetBox], window: int, eps: float) -> bool:
    """
    Whether the center moved less than `eps * min(w, h)` over the last `window` boxes.
    """
    if len(boxes) < window:
        return False

    recent = boxes[-window:]
    (x0, y0), (x1, y1) = recent[0].rect.center, recent[-1].rect.center
    last = recent[-1].rect
    return float(np.hypot(x1 - x0, y1 - y0)) < eps * min(last.w, last.h)

class LocationAwareTracker:
    def __init__(self, config: TrackerConfig | None = None, camera_id: int = 0):
        self.config = config or TrackerConfig()
        self.camera_id = camera_id
        self.kalman_filter = KalmanBoxFilter(self.config.motion)
        self.tracks = TrackSet()
        self._logger = logger.bind(camera=camera_id)

    def frame_cost(self, track: Track, det: DetBox) -> float:
        """
        Fused stage-one cost between a track and a detection, +inf when gated out.
        """
        return float(self._cost_matrix([track], [det], use_appearance=True)[0, 0])

    def _cost_matrix(self, tracks: list[Track], dets: list[DetBox], use_appearance: bool) -> np.ndarray:
        if not tracks or not dets:
            return np.full((len(tracks), len(dets)), np.inf)

        gate = self.config.motion.gate_threshold
        motion = self.kalman_filter.gating_matrix([track.motion for track in tracks], dets)
        allowed = motion <= gate
        cost = motion / gate

        if use_appearance:
            appearance = cosine_matrix(
                np.stack([track.tracklet.ema_feature for track in tracks]),
                np.stack([det.feature for det in dets]),
            )
            allowed &= appearance <= self.config.appearance_reject
            cost = fuse_cost(appearance, cost, self.config.appearance_weight)

        return np.where(allowed, cost, np.inf)

    def _match(self, tracks: list[Track], dets: list[DetBox], use_appearance: bool):
        cost = self._cost_matrix(tracks, dets, use_appearance)
        return linear_assignment(cost)

    def _apply_match(self, track: Track, det: DetBox, frame: int):
        momentum = self.config.ema_momentum
        ema = momentum * track.tracklet.ema_feature + (1.0 - momentum) * _unit(det.feature)

        track.motion = self.kalman_filter.update(track.motion, det)
        track.tracklet.append(det)
        track.tracklet.ema_feature = _unit(ema)
        track.last_real_frame = frame
        track.state = TrackState.ACTIVE

    def _start_track(self, det: DetBox, frame: int) -> Track:
        tracklet = Tracklet(
            track_id=self.tracks.next_id,
            camera_id=self.camera_id,
            boxes=[det],
            ema_feature=_unit(det.feature),
        )
        self.tracks.next_id += 1

        return Track(
            tracklet=tracklet,
            motion=self.kalman_filter.initiate(det),
            motion_frame=frame,
            last_real_frame=frame,
        )

    def associate_frame(self, frame: int, dets: list[DetBox]) -> TrackSet:
        if frame <= self.tracks.last_frame:
            raise UsageError(
                f"Frame {frame} does not follow the last processed frame {self.tracks.last_frame}"
            )
        for det in dets:
            if det.frame != frame:
                raise UsageError(f"Detection {det} does not belong to frame {frame}")
        _check_det_ids(frame, dets)

        cfg = self.config
        pool = self.tracks.live
        for track in pool:
            for _ in range(frame - track.motion_frame):
                track.motion = self.kalman_filter.predict(track.motion)
            track.motion_frame = frame

        dets = sorted(dets, key=lambda det: det.det_id)
        high_dets = [det for det in dets if det.score > cfg.high_score]
        low_dets = [det for det in dets if cfg.low_score < det.score <= cfg.high_score]

        # Stage one: confident detections on appearance + motion.
        matches, unmatched_tracks, unmatched_dets = self._match(pool, high_dets, use_appearance=True)
        for row, col in matches:
            self._apply_match(pool[row], high_dets[col], frame)

        # Stage two: mid-confidence detections on motion only.
        remaining = [pool[row] for row in unmatched_tracks]
        matches_low, _, _ = self._match(remaining, low_dets, use_appearance=False)
        for row, col in matches_low:
            self._apply_match(remaining[row], low_dets[col], frame)

        active, lost = [], []
        for track in pool:
            if track.last_real_frame == frame:
                active.append(track)
            elif frame - track.last_real_frame <= cfg.max_lost:
                track.state = TrackState.LOST
                lost.append(track)
            else:
                self._finish(track)

        for col in unmatched_dets:
            active.append(self._start_track(high_dets[col], frame))

        self.tracks.active = active
        self.tracks.lost = lost
        self.tracks.last_frame = frame

        return self.tracks

    def _finish(self, track: Track):
        boxes = track.tracklet.boxes
        # Frozen boxes after the last real detection fill no gap.
        while boxes and boxes[-1].interp:
            boxes.pop()

        track.state = TrackState.FINISHED
        self.tracks.finished.append(track)

    def ssa_adjust(self, frame: int, dets: list[DetBox]) -> TrackSet:
        """
        Pin unmatched stationary tracks on their best box of the stationary
        episode when every track overlapping them is stationary too.
        """
        cfg = self.config
        live = self.tracks.live
        stationary = {
            track.track_id: is_stationary(
                track.real_boxes(), cfg.stationary_window, cfg.stationary_eps
            )
            for track in live
        }

        for track in live:
            if track.last_real_frame == frame or not stationary[track.track_id]:
                continue

            last_rect = track.tracklet.boxes[-1].rect
            neighbours = [
                other for other in live
                if other is not track and iou(last_rect, other.tracklet.boxes[-1].rect) > 0
            ]
            if not all(stationary[other.track_id] for other in neighbours):
                continue

            episode = track.real_boxes()[-cfg.stationary_window:]
            # Highest score wins, later boxes on ties.
            best = max(reversed(episode), key=lambda box: box.score)

            track.motion = self.kalman_filter.freeze(track.motion, best)
            track.tracklet.append(
                DetBox(
                    frame=frame,
                    rect=best.rect,
                    score=best.score,
                    feature=best.feature,
                    det_id=-1,
                    interp=True,
                    occlusion=best.occlusion,
                )
            )
            self._logger.trace(f"Froze stationary track {track.track_id} at frame {frame}")

        return self.tracks

    def step(self, frame: int, dets: list[DetBox]) -> TrackSet:
        self.associate_frame(frame, dets)
        if self.config.use_ssa:
            self.ssa_adjust(frame, dets)

        return self.tracks

    def finish(self) -> list[Tracklet]:
        for track in self.tracks.live:
            self._finish(track)

        self.tracks.active = []
        self.tracks.lost = []

        return sorted(
            (track.tracklet for track in self.tracks.finished),
            key=lambda tracklet: tracklet.track_id
        )

def track_forward(frames: Sequence[Frame], config: TrackerConfig, camera_id: int = 0) -> list[Tracklet]:
    tracker = LocationAwareTracker(config, camera_id)
    for frame, dets in densify(frames):
        tracker.step(frame, dets)

    return tracker.finish()

def _real_frame_map(tracklet: Tracklet) -> dict[int, DetBox]:
    return {box.frame: box for box in tracklet.boxes if not box.interp}

def track_bidirectional(frames: Sequence[Frame], config: TrackerConfig, camera_id: int = 0) -> list[Tracklet]:
    """
    Track forward and on the time-reversed sequence, then extend each forward
    tracklet with the boxes its backward counterpart found before its start
    or after its end.
    """
    frames = densify(frames)
    if not frames:
        return []

    forward = track_forward(frames, config, camera_id)

    first, last = frames[0][0], frames[-1][0]
    originals = {box.key: box for _, boxes in frames for box in boxes}
    reversed_frames = [
        (first + last - frame, [replace(box, frame=first + last - frame) for box in boxes])
        for frame, boxes in reversed(frames)
    ]
    backward = track_forward(reversed_frames, config, camera_id)

    used = {box.key for tracklet in forward for box in tracklet.boxes if not box.interp}
    forward_maps = [_real_frame_map(tracklet) for tracklet in forward]
    extended = list(forward)
    extensions = 0

    for tracklet in backward:
        boxes = sorted(
            (originals[(first + last - box.frame, box.det_id)] for box in tracklet.boxes if not box.interp),
            key=lambda box: box.frame
        )

        best_index, best_count = None, 0
        for index, frame_map in enumerate(forward_maps):
            count = sum(
                1 for box in boxes
                if box.frame in frame_map and iou(box.rect, frame_map[box.frame].rect) >= config.bt_iou
            )
            if count > best_count:
                best_index, best_count = index, count

        if best_index is None:
            continue

        target = extended[best_index]
        prefix = [box for box in boxes if box.frame < target.first_frame and box.key not in used]
        suffix = [box for box in boxes if box.frame > target.last_frame and box.key not in used]
        if not prefix and not suffix:
            continue

        used.update(box.key for box in prefix + suffix)
        extended[best_index] = Tracklet(
            track_id=target.track_id,
            camera_id=target.camera_id,
            boxes=prefix + target.boxes + suffix,
            ema_feature=target.ema_feature,
        )
        extensions += len(prefix) + len(suffix)

    logger.bind(camera=camera_id).debug(
        f"Bidirectional tracking: {len(forward)} forward, {len(backward)} backward tracklets, "
        f"{extensions} boxes recovered"
    )

    return extended

def _in_scene_middle(point, frame_shape, zones: Sequence[Zone], margin: float) -> bool:
    x, y = point
    width, height = frame_shape
    margin_x, margin_y = margin * width, margin * height
    if x < margin_x or x > width - margin_x or y < margin_y or y > height - margin_y:
        return False

    return not any(zone.contains(point) for zone in zones)

def _mean_feature(boxes: Sequence[DetBox]) -> np.ndarray:
    return np.mean(normalize_rows(np.stack([box.feature for box in boxes])), axis=0)

def _tail_velocity(tracklet: Tracklet, window: int) -> np.ndarray:
    tail = tracklet.boxes[-window:]
    if len(tail) < 2:
        return np.zeros(2)

    start, end = np.array(tail[0].rect.center), np.array(tail[-1].rect.center)
    return (end - start) / (tail[-1].frame - tail[0].frame)

def _relink_pairs(ended, started, config: TrackerConfig):
    window = config.relink_feature_window
    pairs = []
    for before in ended:
        velocity = _tail_velocity(before, window)
        tail_feature = _mean_feature(before.boxes[-window:])
        last_rect = before.boxes[-1].rect

        for after in started:
            if after is before:
                continue

            gap = after.first_frame - before.last_frame
            if not 0 < gap <= config.relink_max_gap:
                continue

            predicted = np.array(last_rect.center) + velocity * gap
            offset = np.linalg.norm(predicted - np.array(after.boxes[0].rect.center))
            if offset > config.relink_spatial_factor * last_rect.diagonal:
                continue

            distance = cosine_distance(tail_feature, _mean_feature(after.boxes[:window]))
            if distance <= config.relink_threshold:
                pairs.append((distance, before.track_id, after.track_id, before, after))

    pairs.sort(key=lambda pair: pair[:3])
    return pairs

def relink(
    tracklets: Sequence[Tracklet],
    config: TrackerConfig,
    frame_shape: tuple[float, float],
    zones: Sequence[Zone] = ()
) -> list[Tracklet]:
    """
    Greedily merge tracklets that end and start in the middle of the scene,
    closest appearance first. Merged tracklets keep the earlier id; passes
    repeat until nothing merges.
    """
    tracklets = {tracklet.track_id: tracklet for tracklet in tracklets}
    merges = 0

    while True:
        ordered = sorted(tracklets.values(), key=lambda tracklet: tracklet.track_id)
        ended = [
            t for t in ordered
            if _in_scene_middle(t.boxes[-1].rect.anchor, frame_shape, zones, config.border_margin)
        ]
        started = [
            t for t in ordered
            if _in_scene_middle(t.boxes[0].rect.anchor, frame_shape, zones, config.border_margin)
        ]

        merged_ids = set()
        for _, before_id, after_id, before, after in _relink_pairs(ended, started, config):
            if before_id in merged_ids or after_id in merged_ids:
                continue

            merged_ids.update((before_id, after_id))
            del tracklets[after_id]
            tracklets[before_id] = Tracklet(
                track_id=before_id,
                camera_id=before.camera_id,
                boxes=before.boxes + after.boxes,
                ema_feature=after.ema_feature,
            )
            merges += 1

        if not merged_ids:
            break

    if merges:
        logger.debug(f"Re-linked {merges} broken tracklets")

    return sorted(tracklets.values(), key=lambda tracklet: tracklet.track_id)

def track_camera(
    frames: Sequence[Frame],
    config: TrackerConfig,
    frame_shape: tuple[float, float],
    zones: Sequence[Zone] = (),
    camera_id: int = 0
) -> list[Tracklet]:
    frames = annotate_occlusion(frames)

    if config.use_bt:
        tracklets = track_bidirectional(frames, config, camera_id)
    else:
        tracklets = track_forward(frames, config, camera_id)

    if config.use_trl:
        tracklets = relink(tracklets, config, frame_shape, zones)

    logger.bind(camera=camera_id).info(
        f"Camera {camera_id}: {len(tracklets)} tracklets from {len(frames)} frames"
    )

    return sorted(tracklets, key=lambda tracklet: tracklet.track_id)
