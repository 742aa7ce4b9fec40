from collections import defaultdict
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import Rect, Tracklet, iou
from .errors import UndefinedMetricError, UsageError
from .matching import linear_assignment

Entry = tuple[Hashable, Rect]

@dataclass
class Observations:
    """
    Identified boxes per camera and frame: `frames[camera][frame]` lists
    (identity, rect) pairs. Used for both ground truth and predictions.
    """
    frames: dict[int, dict[int, list[Entry]]] = field(default_factory=dict)

    def __post_init__(self):
        for camera, per_frame in self.frames.items():
            for frame, entries in per_frame.items():
                ids = [identity for identity, _ in entries]
                if len(ids) != len(set(ids)):
                    raise UsageError(f"Camera {camera}, frame {frame}: identities are not unique")

    def add(self, camera: int, frame: int, identity: Hashable, rect: Rect):
        entries = self.frames.setdefault(camera, {}).setdefault(frame, [])
        if any(existing == identity for existing, _ in entries):
            raise UsageError(f"Camera {camera}, frame {frame}: duplicate identity {identity}")

        entries.append((identity, rect))

    @property
    def cameras(self) -> list[int]:
        return sorted(self.frames)

    def entries(self, camera: int, frame: int) -> list[Entry]:
        return self.frames.get(camera, {}).get(frame, [])

    def box_count(self) -> int:
        return sum(len(entries) for per_frame in self.frames.values() for entries in per_frame.values())

    def identity_lengths(self) -> dict[Hashable, int]:
        lengths = defaultdict(int)
        for camera in self.cameras:
            for frame in sorted(self.frames[camera]):
                for identity, _ in self.frames[camera][frame]:
                    lengths[identity] += 1

        return dict(lengths)

GroundTruth = Observations

@dataclass(frozen=True)
class MetricReport:
    idf1: float
    idp: float
    idr: float
    mota: float
    idsw: int
    fp: int
    fn: int
    gt_count: int
    idtp: int = 0

    def as_row(self) -> dict[str, float | int]:
        return {
            "IDF1": self.idf1,
            "IDP": self.idp,
            "IDR": self.idr,
            "MOTA": self.mota,
            "IDSW": self.idsw,
            "FP": self.fp,
            "FN": self.fn,
        }

def _frames_of(gt: Observations, pred: Observations, camera: int) -> list[int]:
    return sorted(set(gt.frames.get(camera, {})) | set(pred.frames.get(camera, {})))

def _iou_matrix(gt_entries: Sequence[Entry], pred_entries: Sequence[Entry]) -> np.ndarray:
    return np.array(
        [[iou(gt_rect, pred_rect) for _, pred_rect in pred_entries] for _, gt_rect in gt_entries]
    ).reshape(len(gt_entries), len(pred_entries))

def match_frame(
    gt_entries: Sequence[Entry],
    pred_entries: Sequence[Entry],
    iou_min: float = 0.5,
    previous: Mapping[Hashable, Hashable] | None = None
) -> list[tuple[int, int]]:
    """
    One-to-one matching of gt and predicted boxes with iou >= `iou_min`.

    Correspondences from `previous` (gt id -> predicted id) that still
    overlap enough are kept first, the remaining boxes are matched for
    maximal total iou.

    :returns:   (gt index, prediction index) pairs
    """
    if not 0 < iou_min < 1:
        raise UsageError(f"iou_min must be in (0, 1), got {iou_min}")

    overlaps = _iou_matrix(gt_entries, pred_entries)
    matches = []
    if previous:
        pred_index = {identity: index for index, (identity, _) in enumerate(pred_entries)}
        taken = set()
        # Stale correspondences may share a prediction, the first gt in order keeps it.
        for gt_idx, (gt_id, _) in enumerate(gt_entries):
            pred_idx = pred_index.get(previous.get(gt_id))
            if pred_idx is None or pred_idx in taken:
                continue

            if overlaps[gt_idx, pred_idx] >= iou_min:
                matches.append((gt_idx, pred_idx))
                taken.add(pred_idx)

    kept_gt = {gt_idx for gt_idx, _ in matches}
    kept_pred = {pred_idx for _, pred_idx in matches}
    free_gt = [index for index in range(len(gt_entries)) if index not in kept_gt]
    free_pred = [index for index in range(len(pred_entries)) if index not in kept_pred]

    if free_gt and free_pred:
        sub = overlaps[np.ix_(free_gt, free_pred)]
        cost = np.where(sub >= iou_min, 1.0 - sub, np.inf)
        new_matches, _, _ = linear_assignment(cost)
        matches.extend((free_gt[row], free_pred[col]) for row, col in new_matches)

    return sorted(matches)

def _identity_counts(gt: Observations, pred: Observations, iou_min: float):
    gt_lengths = gt.identity_lengths()
    pred_lengths = pred.identity_lengths()
    gt_ids = list(gt_lengths)
    pred_ids = list(pred_lengths)
    gt_index = {identity: index for index, identity in enumerate(gt_ids)}
    pred_index = {identity: index for index, identity in enumerate(pred_ids)}

    counts = np.zeros((len(gt_ids), len(pred_ids)), dtype=np.int64)
    for camera in gt.cameras:
        for frame in sorted(gt.frames[camera]):
            gt_entries = gt.entries(camera, frame)
            pred_entries = pred.entries(camera, frame)
            if not gt_entries or not pred_entries:
                continue

            overlaps = _iou_matrix(gt_entries, pred_entries)
            for gt_idx, pred_idx in zip(*np.nonzero(overlaps >= iou_min)):
                counts[gt_index[gt_entries[gt_idx][0]], pred_index[pred_entries[pred_idx][0]]] += 1

    return counts, sum(gt_lengths.values()), sum(pred_lengths.values())

def _ratio(numerator: float, denominator: float) -> float:
    return numerator / denominator if denominator else 0.0

def idf1(gt: Observations, pred: Observations, iou_min: float = 0.5) -> tuple[float, float, float, int]:
    """
    Identity precision, recall and F1 under the one-to-one mapping of gt and
    predicted identities that maximizes the number of identity-true positives.

    :returns:   (idf1, idp, idr, idtp)
    """
    counts, gt_total, pred_total = _identity_counts(gt, pred, iou_min)

    idtp = 0
    if counts.size:
        rows, cols = linear_sum_assignment(counts, maximize=True)
        idtp = int(counts[rows, cols].sum())

    return (
        _ratio(2 * idtp, gt_total + pred_total),
        _ratio(idtp, pred_total),
        _ratio(idtp, gt_total),
        idtp,
    )

def clear(gt: Observations, pred: Observations, iou_min: float = 0.5) -> tuple[float, int, int, int, int]:
    """
    CLEAR accuracy from frame-wise matching.

    :returns:   (mota, idsw, fp, fn, gt_count)
    """
    fp = fn = idsw = gt_count = 0
    for camera in sorted(set(gt.cameras) | set(pred.cameras)):
        last_match = {}
        for frame in _frames_of(gt, pred, camera):
            gt_entries = gt.entries(camera, frame)
            pred_entries = pred.entries(camera, frame)
            matches = match_frame(gt_entries, pred_entries, iou_min, last_match)

            gt_count += len(gt_entries)
            fn += len(gt_entries) - len(matches)
            fp += len(pred_entries) - len(matches)

            for gt_idx, pred_idx in matches:
                gt_id = gt_entries[gt_idx][0]
                pred_id = pred_entries[pred_idx][0]
                if gt_id in last_match and last_match[gt_id] != pred_id:
                    idsw += 1
                last_match[gt_id] = pred_id

    if gt_count == 0:
        raise UndefinedMetricError("MOTA is undefined without ground-truth boxes")

    return 1.0 - (fn + fp + idsw) / gt_count, idsw, fp, fn, gt_count

def evaluate(gt: Observations, pred: Observations, iou_min: float = 0.5) -> MetricReport:
    f1, precision, recall, idtp = idf1(gt, pred, iou_min)
    mota, idsw, fp, fn, gt_count = clear(gt, pred, iou_min)

    return MetricReport(
        idf1=f1,
        idp=precision,
        idr=recall,
        mota=mota,
        idsw=idsw,
        fp=fp,
        fn=fn,
        gt_count=gt_count,
        idtp=idtp,
    )

def scmt_prediction(tracklets: Iterable[Tracklet]) -> Observations:
    """
    Per-camera tracking output, identities keyed by (camera, track id).
    """
    prediction = Observations()
    for tracklet in tracklets:
        for box in tracklet.boxes:
            prediction.add(tracklet.camera_id, box.frame, (tracklet.camera_id, tracklet.track_id), box.rect)

    return prediction

def mcmt_prediction(tracklets: Iterable[Tracklet], global_ids: Mapping[tuple[int, int], int]) -> Observations:
    """
    Cross-camera output: only tracklets holding a global id are kept.
    """
    prediction = Observations()
    for tracklet in tracklets:
        global_id = global_ids.get((tracklet.camera_id, tracklet.track_id))
        if global_id is None:
            continue

        for box in tracklet.boxes:
            # Two same-camera tracklets merged into one identity keep the first box.
            taken = prediction.entries(tracklet.camera_id, box.frame)
            if any(identity == global_id for identity, _ in taken):
                continue

            prediction.add(tracklet.camera_id, box.frame, global_id, box.rect)

    return prediction

def cross_camera_only(observations: Observations) -> Observations:
    """
    Keep the identities seen by at least two cameras.
    """
    cameras_seen = defaultdict(set)
    for camera, per_frame in observations.frames.items():
        for entries in per_frame.values():
            for identity, _ in entries:
                cameras_seen[identity].add(camera)

    kept = Observations()
    for camera in observations.cameras:
        for frame in sorted(observations.frames[camera]):
            for identity, rect in observations.frames[camera][frame]:
                if len(cameras_seen[identity]) > 1:
                    kept.add(camera, frame, identity, rect)

    return kept

def per_camera(observations: Observations) -> Observations:
    """
    Split every identity per camera: identities become (camera, identity).
    """
    split = Observations()
    for camera in observations.cameras:
        for frame in sorted(observations.frames[camera]):
            for identity, rect in observations.frames[camera][frame]:
                split.add(camera, frame, (camera, identity), rect)

    return split
