import pytest

from mcmt_tracker.evaluation import MetricReport
from mcmt_tracker.store import ResultStore, StoreError

def report(idf1, mota=0.5, idsw=1):
    return MetricReport(idf1=idf1, idp=idf1, idr=idf1, mota=mota, idsw=idsw, fp=0, fn=0, gt_count=10)

@pytest.fixture
def store(tmp_path):
    store = ResultStore(tmp_path / "results.db")
    yield store
    store.dispose()

def test_record_and_summary(store):
    store.record("decoy", 0, "scmt:baseline", report(0.5, idsw=2))
    store.record("decoy", 1, "scmt:baseline", report(0.7, idsw=4))
    store.record("decoy", 0, "ica:box+reciprocal", report(0.9))
    store.record("clean", 0, "scmt:baseline", report(1.0, mota=1.0, idsw=0))

    assert store.count() == 4

    summary = store.summary()
    assert [(scenario, variant, runs) for scenario, variant, runs, *_ in summary] == [
        ("clean", "scmt:baseline", 1),
        ("decoy", "ica:box+reciprocal", 1),
        ("decoy", "scmt:baseline", 2),
    ]
    _, _, _, idf1, mota, idsw = summary[2]
    assert idf1 == pytest.approx(0.6)
    assert mota == pytest.approx(0.5)
    assert idsw == pytest.approx(3.0)

def test_sessions_are_reused_when_nested(store):
    assert store.connection is None

    with store as outer:
        with store as inner:
            assert inner is outer
        assert store.connection is outer

    assert store.connection is None

def test_results_persist(tmp_path):
    first = ResultStore(tmp_path / "results.db")
    first.record("decoy", 0, "k:k=3", report(0.8))
    first.dispose()

    second = ResultStore(tmp_path / "results.db")
    try:
        assert second.count() == 1
    finally:
        second.dispose()

def test_unusable_path(tmp_path):
    with pytest.raises(StoreError):
        ResultStore(tmp_path / "missing" / "results.db")
