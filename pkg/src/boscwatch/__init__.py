"""Bag-of-system-calls anomaly detection for container syscall traces."""

from boscwatch.db import EpochDelta, NormalBehaviorDb
from boscwatch.detector import (
    DetectionReport,
    DetectorConfig,
    EpochVerdict,
    detect_epoch,
    run_detection,
    train,
)
from boscwatch.errors import BoscwatchError
from boscwatch.evaluator import Metrics, SweepGrid, compute_metrics, sweep
from boscwatch.strace import Ignored, Marker, SyscallEvent, open_stream, parse_line
from boscwatch.syscall_index import IndexMap, SyscallCensus, build_census, build_index
from boscwatch.window import SlidingWindow, bosc_of

__version__ = "0.1.0"

__all__ = [
    "BoscwatchError",
    "DetectionReport",
    "DetectorConfig",
    "EpochDelta",
    "EpochVerdict",
    "Ignored",
    "IndexMap",
    "Marker",
    "Metrics",
    "NormalBehaviorDb",
    "SlidingWindow",
    "SweepGrid",
    "SyscallCensus",
    "SyscallEvent",
    "bosc_of",
    "build_census",
    "build_index",
    "compute_metrics",
    "detect_epoch",
    "open_stream",
    "parse_line",
    "run_detection",
    "sweep",
    "train",
]
