import os
import sys

from loguru import logger

MAX_LOG_SIZE = "10MB"

# Level used for metric and ablation reports.
METRIC_LEVEL = "METRIC"

LOG_FILE_NAME = "mcmt.log"

def initialize_logging(log_folder: str | None = None, level: str = "INFO"):
    """
    Set up the loguru sinks used by the command line tools.

    :param log_folder:  Folder for the serialized debug log. No file sink
                        is added when this is None
    :param level:       Lowest level written to the console
    """
    try:
        # Tests if logger has been initialized already.
        logger.level(METRIC_LEVEL)
        return
    except ValueError:
        pass

    time_fmt = "{time:YYYY-MM-DD HH:mm:ss}"
    stream_formatting = "<level>[{level}]</level> | <bold>\"{module}.{name}\", line {line}</bold> - <level>{message}</level>"

    info_format = f"<green>{time_fmt}</green> {stream_formatting}"
    metric_format = f"<cyan>{time_fmt}</cyan> <level>{{message}}</level>"
    warning_format = f"<yellow>{time_fmt}</yellow> {stream_formatting}"
    error_format = f"<red>{time_fmt}</red> {stream_formatting}"

    logger.remove()

    # Create and update logging levels.
    logger.level(METRIC_LEVEL, no=22, color="<cyan>")
    logger.level("WARNING", color="<yellow>")

    # Add stdout info logger.
    logger.add(
        sys.stdout,
        level=level,
        filter=lambda record: record["level"].no <= logger.level("INFO").no,
        colorize=True,
        format=info_format
    )

    # Add stdout metric logger.
    logger.add(
        sys.stdout,
        level=METRIC_LEVEL,
        filter=lambda record: record["level"].name == METRIC_LEVEL,
        colorize=True,
        format=metric_format
    )

    # Add stdout warning logger.
    logger.add(
        sys.stdout,
        level="WARNING",
        filter=lambda record: record["level"].no < logger.level("ERROR").no,
        colorize=True,
        format=warning_format
    )

    # Add stderr error logger.
    logger.add(
        sys.stderr,
        level="ERROR",
        colorize=True,
        format=error_format
    )

    if log_folder is None:
        return

    if not os.path.exists(log_folder):
        os.makedirs(log_folder)

    # Serialized records keep the camera and link bound by the trackers.
    logger.add(
        os.path.join(log_folder, LOG_FILE_NAME),
        level="DEBUG",
        rotation=MAX_LOG_SIZE,
        retention="1 month",
        encoding="utf-8",
        serialize=True
    )

def log_metrics(label: str, report):
    logger.log(
        METRIC_LEVEL if _metric_level_exists() else "INFO",
        f"{label}: IDF1={report.idf1:.4f} IDP={report.idp:.4f} IDR={report.idr:.4f} "
        f"MOTA={report.mota:.4f} IDSW={report.idsw}"
    )

def _metric_level_exists():
    try:
        logger.level(METRIC_LEVEL)
        return True
    except ValueError:
        return False
