"""Training and epoch-based detection over a parsed trace stream."""

import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple

from boscwatch.db import EpochDelta, NormalBehaviorDb
from boscwatch.errors import (
    ConfigError,
    FormatError,
    InsufficientTrainingData,
    MarkerInTraining,
    MarkerOrderError,
)
from boscwatch.strace import ATTACK_END, ATTACK_START, Marker, SyscallEvent
from boscwatch.syscall_index import IndexMap
from boscwatch.window import DEFAULT_K, SlidingWindow

log = logging.getLogger(__name__)

DEFAULT_EPOCH_SIZE = 1000
DEFAULT_THRESHOLD = 10


@dataclass(frozen=True)
class DetectorConfig:
    """Window size ``k``, epoch size ``epoch_size`` (S) in syscalls, and the
    per-epoch mismatch threshold ``threshold`` (T_d).  An epoch is anomalous
    when its mismatch count is strictly greater than the threshold."""

    k: int = DEFAULT_K
    epoch_size: int = DEFAULT_EPOCH_SIZE
    threshold: int = DEFAULT_THRESHOLD
    train_events: Optional[int] = None
    continuous_training: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"window size k must be >= 1, got {self.k}")
        if self.epoch_size < self.k:
            raise ConfigError(
                f"epoch size S={self.epoch_size} must be >= window size k={self.k}")
        if self.threshold < 1:
            raise ConfigError(f"threshold T_d must be >= 1, got {self.threshold}")
        if self.train_events is not None and self.train_events < self.k:
            raise ConfigError(
                f"train_events={self.train_events} must be >= window size k={self.k}")


@dataclass(frozen=True)
class EpochVerdict:
    epoch_index: int
    events_in_epoch: int
    mismatches: int
    anomalous: bool
    attack_overlap: bool

    def to_line(self) -> str:
        return (f"epoch,{self.epoch_index},events,{self.events_in_epoch},"
                f"mismatches,{self.mismatches},anomalous,{int(self.anomalous)},"
                f"attack,{int(self.attack_overlap)}")

    @classmethod
    def from_line(cls, line: str) -> "EpochVerdict":
        parts = line.strip().split(",")
        keys = ("epoch", "events", "mismatches", "anomalous", "attack")
        if len(parts) != 10 or tuple(parts[0::2]) != keys:
            raise FormatError(f"not a verdict line: {line!r}")
        try:
            idx, n, m, anom, attack = (int(v) for v in parts[1::2])
        except ValueError:
            raise FormatError(f"non-integer field in verdict line: {line!r}") from None
        if anom not in (0, 1) or attack not in (0, 1):
            raise FormatError(f"flags must be 0 or 1: {line!r}")
        return cls(idx, n, m, bool(anom), bool(attack))


@dataclass
class DetectionReport:
    verdicts: List[EpochVerdict] = field(default_factory=list)
    db_size_final: int = 0

    @property
    def total_events(self) -> int:
        return sum(v.events_in_epoch for v in self.verdicts)

    @property
    def total_mismatches(self) -> int:
        return sum(v.mismatches for v in self.verdicts)

    @property
    def anomalous(self) -> bool:
        return any(v.anomalous for v in self.verdicts)


def train(items: Iterable, config: DetectorConfig, index_map: IndexMap,
          db: Optional[NormalBehaviorDb] = None) -> NormalBehaviorDb:
    """Consume exactly ``config.train_events`` syscall events into a database.

    Pass an iterator to keep reading the rest of the stream afterwards:
    nothing past the last training event is consumed.
    """
    n = config.train_events
    if n is None:
        raise ConfigError("train_events must be set for training")
    if db is None:
        db = NormalBehaviorDb(config.k, index_map.vector_len)
    elif (db.k, db.vector_len) != (config.k, index_map.vector_len):
        raise ConfigError("existing database does not match k / index map")
    if n == 0:
        return db
    window = SlidingWindow(config.k, index_map.vector_len)
    table = db.table
    lookup = index_map.lookup
    seen = 0
    for item in items:
        if type(item) is SyscallEvent:
            bag = window.push(lookup(item.name))
            if bag is not None:
                table[bag] = table.get(bag, 0) + 1
            seen += 1
            if seen == n:
                return db
        elif type(item) is Marker:
            raise MarkerInTraining(
                f"attack marker at event {item.seq} inside the {n}-event training span")
    raise InsufficientTrainingData(f"trace ended after {seen} of {n} training events")


def detect_epoch(events: Sequence, db: NormalBehaviorDb, window: SlidingWindow,
                 index_map: IndexMap, config: DetectorConfig, epoch_index: int = 0,
                 attack_overlap: bool = False) -> Tuple[EpochVerdict, EpochDelta]:
    """Score one epoch.  ``events`` holds SyscallEvents or bare names.

    Every bag the window emits is staged; bags missing from ``db`` also count
    as mismatches.  ``window`` carries over between epochs.
    """
    table = db.table
    lookup = index_map.lookup
    push = window.push
    delta = EpochDelta(index_map.vector_len)
    staged = delta.staged
    mismatches = 0
    for ev in events:
        bag = push(lookup(getattr(ev, "name", ev)))
        if bag is None:
            continue
        if bag not in table:
            mismatches += 1
        staged[bag] = staged.get(bag, 0) + 1
    verdict = EpochVerdict(
        epoch_index=epoch_index,
        events_in_epoch=len(events),
        mismatches=mismatches,
        anomalous=mismatches > config.threshold,
        attack_overlap=attack_overlap,
    )
    return verdict, delta


class Detector:
    """Streaming detection state: owns the window, the database and the
    current epoch buffer.  Feed parsed items; verdicts come out as each
    epoch of ``config.epoch_size`` syscalls completes."""

    def __init__(self, db: NormalBehaviorDb, index_map: IndexMap, config: DetectorConfig):
        if (db.k, db.vector_len) != (config.k, index_map.vector_len):
            raise ConfigError(
                f"database (k={db.k}, len={db.vector_len}) does not match config "
                f"k={config.k} / index map len={index_map.vector_len}")
        self.db = db
        self.index_map = index_map
        self.config = config
        self.window = SlidingWindow(config.k, index_map.vector_len)
        self.in_attack = False
        self.epoch_index = 0
        self._names = []
        self._overlap = False

    def feed(self, item) -> Optional[EpochVerdict]:
        kind = type(item)
        if kind is SyscallEvent:
            self._names.append(item.name)
            if self.in_attack:
                self._overlap = True
            if len(self._names) == self.config.epoch_size:
                return self._close_epoch()
        elif kind is Marker:
            self._mark(item)
        return None

    def _mark(self, marker):
        if marker.kind == ATTACK_START:
            if self.in_attack:
                raise MarkerOrderError(f"nested attack start at event {marker.seq}")
            self.in_attack = True
        elif marker.kind == ATTACK_END:
            if not self.in_attack:
                raise MarkerOrderError(f"attack end without start at event {marker.seq}")
            self.in_attack = False

    def _close_epoch(self) -> EpochVerdict:
        verdict, delta = detect_epoch(
            self._names, self.db, self.window, self.index_map, self.config,
            self.epoch_index, self._overlap)
        if self.config.continuous_training and not verdict.anomalous:
            self.db.commit(delta)
        self.epoch_index += 1
        self._names = []
        self._overlap = False
        return verdict

    def finish(self) -> Optional[EpochVerdict]:
        """Close a short final epoch, if any events are pending."""
        if self.in_attack:
            log.warning("trace ended inside an attack span")
        if self._names:
            return self._close_epoch()
        return None

    def run(self, items: Iterable) -> Iterator[EpochVerdict]:
        for item in items:
            verdict = self.feed(item)
            if verdict is not None:
                yield verdict
        verdict = self.finish()
        if verdict is not None:
            yield verdict


def iter_detection(items: Iterable, db: NormalBehaviorDb, config: DetectorConfig,
                   index_map: IndexMap) -> Iterator[EpochVerdict]:
    """Yield verdicts as epochs complete; ``db`` is updated in place."""
    return Detector(db, index_map, config).run(items)


def run_detection(items: Iterable, db: NormalBehaviorDb, config: DetectorConfig,
                  index_map: IndexMap) -> DetectionReport:
    """Detect over the whole stream.  With continuous training on, clean
    epochs are committed into ``db`` in place; copy it first to keep the
    original."""
    verdicts = list(iter_detection(items, db, config, index_map))
    return DetectionReport(verdicts, len(db))
