from loguru import logger

from mcmt_tracker.evaluation import MetricReport
from mcmt_tracker.logging import initialize_logging, log_metrics

def test_log_metrics():
    initialize_logging()

    messages = []
    sink_id = logger.add(messages.append, level=0, format="{level} {message}")
    try:
        report = MetricReport(idf1=0.5, idp=0.25, idr=1.0, mota=0.75, idsw=3, fp=1, fn=2, gt_count=8)
        log_metrics("Multi-camera", report)
    finally:
        logger.remove(sink_id)

    assert len(messages) == 1
    assert messages[0].startswith("METRIC Multi-camera:")
    assert "IDF1=0.5000" in messages[0]
    assert "IDSW=3" in messages[0]

def test_initialize_logging_twice():
    initialize_logging()
    initialize_logging()

    assert logger.level("METRIC").no == 22
