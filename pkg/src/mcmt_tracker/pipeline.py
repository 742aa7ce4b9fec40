"""
End-to-end runs: per-camera tracking, per-link association, global
identities and evaluation, plus the strategy ablation grid.
"""
from collections import defaultdict
from dataclasses import dataclass
from multiprocessing.pool import ThreadPool
from typing import Callable, Mapping, Sequence

import numpy as np
from loguru import logger

from .config import IcaConfig, RunConfig, TrackerConfig
from .core import CameraTopology, Frame, TopologyLink, Tracklet
from .errors import TrackingError, UsageError, with_context
from .evaluation import (
    MetricReport,
    Observations,
    cross_camera_only,
    evaluate,
    mcmt_prediction,
    per_camera,
    scmt_prediction,
)
from .ica import GlobalAssignment, LinkMatch, associate_link, build_pool, postprocess
from .io import (
    GLOBAL_FILE,
    load_camera_detections,
    read_global_ids,
    read_ground_truth,
    read_topology,
    read_tracks,
    track_file,
    write_global_ids,
    write_tracks,
)
from .logging import log_metrics
from .scmt import track_camera
from .synth import generate_scenario, preset

Task = tuple[str, Callable, tuple]

@dataclass
class PipelineResult:
    tracklets: dict[int, list[Tracklet]]
    assignment: GlobalAssignment
    mcmt_report: MetricReport | None = None
    scmt_report: MetricReport | None = None

    @property
    def all_tracklets(self) -> list[Tracklet]:
        return [tracklet for camera in sorted(self.tracklets) for tracklet in self.tracklets[camera]]

def _run_tasks(tasks: Sequence[Task], jobs: int = 1) -> list:
    """
    Run (label, function, args) tasks on a pool of `jobs` threads and
    collect their results in task order. Errors are re-raised with the
    task label as context.
    """
    if jobs <= 1 or len(tasks) <= 1:
        results = []
        for label, func, args in tasks:
            try:
                results.append(func(*args))
            except TrackingError as exc:
                raise with_context(exc, label) from exc

        return results

    with ThreadPool(min(jobs, len(tasks))) as pool:
        futures = [(label, pool.apply_async(func, args)) for label, func, args in tasks]

        results = []
        for label, future in futures:
            try:
                results.append(future.get())
            except TrackingError as exc:
                raise with_context(exc, label) from exc

    return results

def track_cameras(
    detections: Mapping[int, Sequence[Frame]],
    topology: CameraTopology,
    config: TrackerConfig,
    jobs: int = 1
) -> dict[int, list[Tracklet]]:
    cameras = sorted(detections)
    tasks = []
    for camera in cameras:
        descriptor = topology.camera(camera)
        tasks.append((
            f"camera {camera}",
            track_camera,
            (detections[camera], config, descriptor.frame_shape, descriptor.zones, camera),
        ))

    return dict(zip(cameras, _run_tasks(tasks, jobs)))

def _associate_link(
    tracklets: Mapping[int, Sequence[Tracklet]],
    link: TopologyLink,
    topology: CameraTopology,
    config: IcaConfig
) -> list[LinkMatch]:
    pool = build_pool(tracklets.get(link.cam_out, []), tracklets.get(link.cam_in, []), link, topology)
    return associate_link(pool, config)

def associate_cameras(
    tracklets: Mapping[int, Sequence[Tracklet]],
    topology: CameraTopology,
    config: IcaConfig,
    jobs: int = 1
) -> GlobalAssignment:
    tasks = [
        (f"link {link.name}", _associate_link, (tracklets, link, topology, config))
        for link in topology.links
    ]
    matches = [match for link_matches in _run_tasks(tasks, jobs) for match in link_matches]
    everything = [tracklet for camera in sorted(tracklets) for tracklet in tracklets[camera]]

    assignment = postprocess(matches, everything, config.include_singletons)
    logger.info(
        f"Associated {len(assignment.pairs)} tracklet pairs into "
        f"{len(assignment.components)} global identities"
    )

    return assignment

def scmt_report(
    tracklets: Sequence[Tracklet],
    ground_truth: Observations,
    iou_min: float = 0.5
) -> MetricReport:
    return evaluate(per_camera(ground_truth), scmt_prediction(tracklets), iou_min)

def mcmt_report(
    tracklets: Sequence[Tracklet],
    assignment: GlobalAssignment,
    ground_truth: Observations,
    iou_min: float = 0.5
) -> MetricReport | None:
    """
    Cross-camera metrics over the identities seen by more than one camera.
    None when there are no such identities.
    """
    cross_camera = cross_camera_only(ground_truth)
    if cross_camera.box_count() == 0:
        logger.warning("No identity crosses cameras, cross-camera metrics are skipped")
        return None

    return evaluate(cross_camera, mcmt_prediction(tracklets, assignment.global_ids), iou_min)

def evaluate_result(result: PipelineResult, ground_truth: Observations, iou_min: float = 0.5) -> PipelineResult:
    tracklets = result.all_tracklets
    result.scmt_report = scmt_report(tracklets, ground_truth, iou_min)
    result.mcmt_report = mcmt_report(tracklets, result.assignment, ground_truth, iou_min)

    log_metrics("Single-camera", result.scmt_report)
    if result.mcmt_report is not None:
        log_metrics("Multi-camera", result.mcmt_report)

    return result

def run_scenario(
    scenario,
    tracker: TrackerConfig | None = None,
    ica: IcaConfig | None = None,
    jobs: int = 1,
    iou_min: float = 0.5
) -> PipelineResult:
    """
    Track, associate and evaluate a generated scenario in memory.
    """
    tracklets = track_cameras(scenario.detections, scenario.topology, tracker or TrackerConfig(), jobs)
    assignment = associate_cameras(tracklets, scenario.topology, ica or IcaConfig(), jobs)

    return evaluate_result(PipelineResult(tracklets, assignment), scenario.ground_truth, iou_min)

def load_inputs(run: RunConfig) -> tuple[CameraTopology, dict[int, list[Frame]]]:
    topology = read_topology(run.topology)

    detections = {}
    for camera in topology.camera_ids:
        try:
            detections[camera] = load_camera_detections(run.detections, camera)
        except TrackingError as exc:
            raise with_context(exc, f"camera {camera}") from exc

    return topology, detections

def track_single(run: RunConfig, camera: int) -> list[Tracklet]:
    topology = read_topology(run.topology)
    topology.camera(camera)

    try:
        frames = load_camera_detections(run.detections, camera)
    except TrackingError as exc:
        raise with_context(exc, f"camera {camera}") from exc

    tracklets = track_cameras({camera: frames}, topology, run.tracker)[camera]
    write_tracks(run.output, camera, tracklets)

    return tracklets

def read_outputs(run: RunConfig) -> tuple[CameraTopology, dict[int, list[Tracklet]]]:
    """
    Read back the per-camera tracking outputs of a run, joined with their
    detections.
    """
    topology, detections = load_inputs(run)

    tracklets = {}
    for camera, frames in detections.items():
        path = track_file(run.output, camera)
        try:
            tracklets[camera] = read_tracks(path, camera, frames)
        except TrackingError as exc:
            raise with_context(exc, f"camera {camera}") from exc

    return topology, tracklets

def associate_outputs(run: RunConfig) -> PipelineResult:
    topology, tracklets = read_outputs(run)
    assignment = associate_cameras(tracklets, topology, run.ica, run.jobs)
    write_global_ids(run.output / GLOBAL_FILE, assignment.global_ids)

    return PipelineResult(tracklets, assignment)

def evaluate_outputs(run: RunConfig) -> PipelineResult:
    if run.ground_truth is None:
        raise UsageError("Evaluation needs a ground_truth folder in the run config")

    _, tracklets = read_outputs(run)
    global_ids = read_global_ids(run.output / GLOBAL_FILE)
    assignment = GlobalAssignment(pairs=[], components=[], global_ids=global_ids)

    ground_truth = read_ground_truth(run.ground_truth, None)
    return evaluate_result(PipelineResult(tracklets, assignment), ground_truth, run.iou_min)

def run_pipeline(run: RunConfig) -> PipelineResult:
    topology, detections = load_inputs(run)

    tracklets = track_cameras(detections, topology, run.tracker, run.jobs)
    for camera, camera_tracklets in tracklets.items():
        write_tracks(run.output, camera, camera_tracklets)

    assignment = associate_cameras(tracklets, topology, run.ica, run.jobs)
    write_global_ids(run.output / GLOBAL_FILE, assignment.global_ids)

    result = PipelineResult(tracklets, assignment)
    if run.ground_truth is not None:
        evaluate_result(result, read_ground_truth(run.ground_truth, None), run.iou_min)

    logger.info(f"Wrote tracking output to '{run.output}'")
    return result

@dataclass(frozen=True)
class AblationVariant:
    group: str
    label: str
    scenario: str
    tracker: TrackerConfig
    ica: IcaConfig
    single_camera: bool = False

    @property
    def name(self) -> str:
        return f"{self.group}:{self.label}"

@dataclass(frozen=True)
class AblationRow:
    group: str
    scenario: str
    variant: str
    runs: int
    idf1: float
    idf1_sem: float
    mota: float
    idsw: float

    def as_tuple(self) -> tuple:
        return (self.group, self.scenario, self.variant, self.runs, self.idf1, self.idf1_sem, self.mota, self.idsw)

ABLATION_COLUMNS = ("Group", "Scenario", "Variant", "Runs", "IDF1", "IDF1 SE", "MOTA", "IDSW")

K_SWEEP = (3, 5, 7, 9)

def ablation_variants(
    tracker: TrackerConfig | None = None,
    ica: IcaConfig | None = None,
    scmt_scenario: str = "scmt_ablation",
    ica_scenario: str = "similar_appearance"
) -> list[AblationVariant]:
    """
    The strategy grid: single-camera strategies, the four association
    variants, the distance-matrix refinements and the k sweep.
    """
    tracker = tracker or TrackerConfig()
    ica = ica or IcaConfig()

    variants = []
    scmt_rows = (
        ("baseline", dict(use_ssa=False, use_trl=False, use_bt=False)),
        ("+SSA", dict(use_ssa=True, use_trl=False, use_bt=False)),
        ("+SSA+TRL", dict(use_ssa=True, use_trl=True, use_bt=False)),
        ("+SSA+TRL+BT", dict(use_ssa=True, use_trl=True, use_bt=True)),
    )
    for label, update in scmt_rows:
        variants.append(
            AblationVariant("scmt", label, scmt_scenario, tracker.model_copy(update=update), ica, True)
        )

    for matrix in ("tracklet", "box"):
        for method in ("hungarian", "reciprocal"):
            variants.append(
                AblationVariant(
                    "ica",
                    f"{matrix}+{method}",
                    ica_scenario,
                    tracker,
                    ica.model_copy(update=dict(matrix=matrix, method=method)),
                )
            )

    matrix_rows = (
        ("none", dict(use_rerank=False, use_time_window=False, use_occlusion=False)),
        ("RR", dict(use_rerank=True, use_time_window=False, use_occlusion=False)),
        ("RR+TTW", dict(use_rerank=True, use_time_window=True, use_occlusion=False)),
        ("RR+OR", dict(use_rerank=True, use_time_window=False, use_occlusion=True)),
        ("RR+TTW+OR", dict(use_rerank=True, use_time_window=True, use_occlusion=True)),
    )
    box_reciprocal = dict(matrix="box", method="reciprocal")
    for label, update in matrix_rows:
        variants.append(
            AblationVariant("matrix", label, ica_scenario, tracker, ica.model_copy(update={**box_reciprocal, **update}))
        )

    for k in K_SWEEP:
        variants.append(
            AblationVariant(
                "k", f"k={k}", ica_scenario, tracker, ica.model_copy(update={**box_reciprocal, "k_reciprocal": k})
            )
        )

    return variants

def _summarize(variant: AblationVariant, reports: list[MetricReport]) -> AblationRow:
    idf1_values = np.array([report.idf1 for report in reports])
    sem = 0.0
    if len(reports) > 1:
        sem = float(np.std(idf1_values, ddof=1) / np.sqrt(len(reports)))

    return AblationRow(
        group=variant.group,
        scenario=variant.scenario,
        variant=variant.label,
        runs=len(reports),
        idf1=float(idf1_values.mean()) if reports else 0.0,
        idf1_sem=sem,
        mota=float(np.mean([report.mota for report in reports])) if reports else 0.0,
        idsw=float(np.mean([report.idsw for report in reports])) if reports else 0.0,
    )

def run_ablation(
    variants: Sequence[AblationVariant],
    seeds: Sequence[int],
    jobs: int = 1,
    store=None,
    iou_min: float = 0.5
) -> list[AblationRow]:
    """
    Run every variant on its scenario preset for every seed. Variants
    sharing a scenario and tracker settings share the tracking run.

    :param store:   Optional ResultStore receiving every per-seed report
    """
    by_scenario = defaultdict(list)
    for index, variant in enumerate(variants):
        by_scenario[variant.scenario].append((index, variant))

    reports = defaultdict(list)
    for scenario_name, indexed in by_scenario.items():
        for seed in seeds:
            scenario = generate_scenario(preset(scenario_name, seed))
            tracked = {}

            for index, variant in indexed:
                key = variant.tracker.model_dump_json()
                if key not in tracked:
                    tracked[key] = track_cameras(scenario.detections, scenario.topology, variant.tracker, jobs)

                tracklets = tracked[key]
                flat = [tracklet for camera in sorted(tracklets) for tracklet in tracklets[camera]]
                if variant.single_camera:
                    report = scmt_report(flat, scenario.ground_truth, iou_min)
                else:
                    assignment = associate_cameras(tracklets, scenario.topology, variant.ica, jobs)
                    report = mcmt_report(flat, assignment, scenario.ground_truth, iou_min)

                if report is None:
                    continue

                logger.debug(
                    f"{scenario_name} seed {seed} {variant.name}: "
                    f"IDF1={report.idf1:.4f} MOTA={report.mota:.4f} IDSW={report.idsw}"
                )
                reports[index].append(report)
                if store is not None:
                    store.record(scenario_name, seed, variant.name, report)

    return [_summarize(variant, reports[index]) for index, variant in enumerate(variants)]
