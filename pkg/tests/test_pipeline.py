import numpy as np
import pytest

from mcmt_tracker.config import TrackerConfig, load_run_config
from mcmt_tracker.core import DetBox, Rect
from mcmt_tracker.errors import ConfigError, DataIntegrityError, UsageError
from mcmt_tracker.io import GLOBAL_FILE, feature_file, read_global_ids, track_file, write_scenario
from mcmt_tracker.pipeline import (
    ABLATION_COLUMNS,
    K_SWEEP,
    ablation_variants,
    associate_outputs,
    evaluate_outputs,
    run_ablation,
    run_pipeline,
    run_scenario,
    track_cameras,
    track_single,
)
from mcmt_tracker.store import ResultStore
from mcmt_tracker.synth import generate_scenario, preset

@pytest.fixture(scope="module")
def decoy_scenario():
    return generate_scenario(preset("decoy", seed=0))

@pytest.fixture
def decoy_run(tmp_path, decoy_scenario):
    return write_scenario(tmp_path / "scene", decoy_scenario)

def test_clean_scenario_is_solved():
    result = run_scenario(generate_scenario(preset("clean", seed=0)))

    assert result.scmt_report.idf1 >= 0.95
    assert result.mcmt_report.idf1 == 1.0

def test_noisy_scenario_is_solved_on_average():
    scores = [run_scenario(generate_scenario(preset("noisy", seed=seed))).mcmt_report.idf1 for seed in range(20)]

    assert np.mean(scores) >= 0.95

def _scmt_rows(scenario, seeds, labels=None):
    variants = [
        variant
        for variant in ablation_variants(scmt_scenario=scenario)
        if variant.group == "scmt" and (labels is None or variant.label in labels)
    ]
    return {row.variant: row for row in run_ablation(variants, seeds)}

def test_single_camera_strategies_add_up():
    rows = _scmt_rows("scmt_ablation", range(20), ("baseline", "+SSA", "+SSA+TRL+BT"))

    assert rows["baseline"].idf1 < rows["+SSA"].idf1 < rows["+SSA+TRL+BT"].idf1
    assert rows["+SSA+TRL+BT"].idsw <= rows["baseline"].idsw

def test_stationary_handling_keeps_identities_through_stops():
    rows = _scmt_rows("stop_and_go", range(3), ("baseline", "+SSA"))

    assert rows["+SSA"].idsw <= rows["baseline"].idsw

def test_relinking_repairs_occlusion_splits():
    rows = _scmt_rows("occlusion_split", range(3), ("baseline", "+SSA+TRL+BT"))

    assert rows["+SSA+TRL+BT"].idf1 > rows["baseline"].idf1

def test_decoy_gets_no_global_identity(decoy_scenario):
    result = run_scenario(decoy_scenario)
    t_out = decoy_scenario.topology.links[0].t_out

    late = [tracklet for tracklet in result.tracklets[0] if tracklet.last_frame >= t_out]
    assert late
    assert all(result.assignment.global_id(tracklet) is None for tracklet in late)
    assert len(result.assignment.components) == 2

def test_threads_do_not_change_tracking(decoy_scenario):
    config = TrackerConfig()
    sequential = track_cameras(decoy_scenario.detections, decoy_scenario.topology, config, jobs=1)
    threaded = track_cameras(decoy_scenario.detections, decoy_scenario.topology, config, jobs=2)

    assert sorted(sequential) == sorted(threaded) == [0, 1]
    for camera in sequential:
        assert [t.frames for t in sequential[camera]] == [t.frames for t in threaded[camera]]

def test_camera_errors_carry_context(decoy_scenario):
    detections = dict(decoy_scenario.detections)
    box = DetBox(frame=3, rect=Rect(0, 0, 10, 10), score=0.9, feature=np.ones(4))
    detections[1] = [(3, [box]), (2, [])]

    with pytest.raises(UsageError, match="^camera 1: "):
        track_cameras(detections, decoy_scenario.topology, TrackerConfig(), jobs=2)

def test_file_pipeline_is_deterministic(tmp_path, decoy_run):
    first = run_pipeline(load_run_config(decoy_run, [f"output={tmp_path / 'first'}"]))
    second = run_pipeline(load_run_config(decoy_run, [f"output={tmp_path / 'second'}", "jobs=2"]))

    for camera in (0, 1):
        assert track_file(tmp_path / "first", camera).read_text() == track_file(tmp_path / "second", camera).read_text()

    assert (tmp_path / "first" / GLOBAL_FILE).read_text() == (tmp_path / "second" / GLOBAL_FILE).read_text()
    assert first.mcmt_report == second.mcmt_report
    assert first.scmt_report is not None

def test_staged_run_matches_pipeline(tmp_path, decoy_run):
    full = run_pipeline(load_run_config(decoy_run, [f"output={tmp_path / 'full'}"]))

    staged = load_run_config(decoy_run, [f"output={tmp_path / 'staged'}"])
    for camera in (0, 1):
        track_single(staged, camera)
    associated = associate_outputs(staged)
    evaluated = evaluate_outputs(staged)

    assert associated.assignment.global_ids == full.assignment.global_ids
    assert read_global_ids(tmp_path / "staged" / GLOBAL_FILE) == full.assignment.global_ids
    assert evaluated.mcmt_report == full.mcmt_report
    assert evaluated.scmt_report == full.scmt_report

def test_track_single_unknown_camera(tmp_path, decoy_run):
    run = load_run_config(decoy_run, [f"output={tmp_path / 'out'}"])

    with pytest.raises(ConfigError):
        track_single(run, 7)

def test_evaluate_needs_ground_truth(tmp_path, decoy_run):
    run = load_run_config(decoy_run, [f"output={tmp_path / 'out'}", "ground_truth=null"])

    with pytest.raises(UsageError):
        evaluate_outputs(run)

    result = run_pipeline(run)
    assert result.mcmt_report is None and result.scmt_report is None

def test_corrupt_camera_is_reported(tmp_path, decoy_run):
    run = load_run_config(decoy_run, [f"output={tmp_path / 'out'}"])
    path = feature_file(run.detections, 0)
    path.write_bytes(path.read_bytes()[:-2])

    with pytest.raises(DataIntegrityError, match="^camera 0: "):
        run_pipeline(run)

def test_ablation_variants():
    variants = ablation_variants()

    assert len(variants) == 17
    assert len({variant.name for variant in variants}) == 17
    assert [v.label for v in variants if v.group == "k"] == [f"k={k}" for k in K_SWEEP]
    assert all(v.single_camera for v in variants if v.group == "scmt")

    baseline = variants[0]
    assert (baseline.tracker.use_ssa, baseline.tracker.use_trl, baseline.tracker.use_bt) == (False, False, False)

    none = next(v for v in variants if v.name == "matrix:none")
    assert not (none.ica.use_rerank or none.ica.use_time_window or none.ica.use_occlusion)
    assert (none.ica.matrix, none.ica.method) == ("box", "reciprocal")

def test_run_ablation_records_results(tmp_path):
    variants = [
        variant
        for variant in ablation_variants(scmt_scenario="decoy", ica_scenario="decoy")
        if variant.name in ("scmt:baseline", "scmt:+SSA", "ica:tracklet+hungarian")
    ]
    store = ResultStore(tmp_path / "results.db")

    try:
        rows = run_ablation(variants, [0, 1], store=store)

        assert [row.variant for row in rows] == ["baseline", "+SSA", "tracklet+hungarian"]
        assert all(row.runs == 2 for row in rows)
        assert all(0.0 <= row.idf1 <= 1.0 for row in rows)
        assert len(rows[0].as_tuple()) == len(ABLATION_COLUMNS)

        assert store.count() == 6
        summary = store.summary()
        assert [variant for _, variant, *_ in summary] == [
            "ica:tracklet+hungarian", "scmt:+SSA", "scmt:baseline"
        ]
        assert all(runs == 2 for _, _, runs, *_ in summary)
    finally:
        store.dispose()
