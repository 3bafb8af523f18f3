"""TPR/FPR scoring of epoch verdicts and (S, T_d) parameter sweeps."""

import csv
import io
import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

import numpy as np

from boscwatch.detector import DetectorConfig, EpochVerdict, run_detection, train
from boscwatch.errors import ConfigError, MarkerInTraining, MarkerOrderError, UndefinedMetric
from boscwatch.strace import ATTACK_START, Marker, SyscallEvent, open_stream
from boscwatch.syscall_index import IndexMap, build_census, build_index
from boscwatch.window import DEFAULT_K, SlidingWindow

log = logging.getLogger(__name__)

CSV_COLUMNS = ("S", "T_d", "tpr", "fpr", "n_tp", "n_fp", "n_malicious", "n_normal")


@dataclass(frozen=True)
class Metrics:
    """Epoch-level confusion counts.  A rate is None when its denominator is
    zero (no malicious or no normal epochs)."""

    n_tp: int
    n_fp: int
    n_malicious: int
    n_normal: int

    @property
    def tpr(self) -> Optional[float]:
        return self.n_tp / self.n_malicious if self.n_malicious else None

    @property
    def fpr(self) -> Optional[float]:
        return self.n_fp / self.n_normal if self.n_normal else None

    def require(self, name: str) -> float:
        value = getattr(self, name)
        if value is None:
            raise UndefinedMetric(f"{name} undefined: no "
                                  f"{'malicious' if name == 'tpr' else 'normal'} epochs")
        return value


def compute_metrics(verdicts: Sequence[EpochVerdict],
                    epoch_size: Optional[int] = None) -> Metrics:
    """Confusion counts over epochs.

    With ``epoch_size`` set, epochs holding fewer events (the trailing
    partial epoch) are left out, so rates stay comparable across epoch sizes
    under an absolute threshold.
    """
    if epoch_size is not None:
        verdicts = [v for v in verdicts if v.events_in_epoch >= epoch_size]
    if not verdicts:
        raise ValueError("no verdicts to score")
    n_tp = n_fp = n_mal = 0
    for v in verdicts:
        if v.attack_overlap:
            n_mal += 1
            n_tp += v.anomalous
        else:
            n_fp += v.anomalous
    return Metrics(int(n_tp), int(n_fp), n_mal, len(verdicts) - n_mal)


def _check_increasing(values, what):
    values = [int(v) for v in values]
    if not values:
        raise ConfigError(f"{what} must not be empty")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError(f"{what} must be strictly increasing: {values}")
    return tuple(values)


@dataclass(frozen=True)
class SweepGrid:
    epoch_sizes: tuple = tuple(range(1000, 10001, 500))
    thresholds: tuple = tuple(range(10, 101, 10))

    def __post_init__(self):
        object.__setattr__(self, "epoch_sizes",
                           _check_increasing(self.epoch_sizes, "epoch sizes"))
        object.__setattr__(self, "thresholds",
                           _check_increasing(self.thresholds, "thresholds"))

    @classmethod
    def from_ranges(cls, s_start, s_stop, s_step, t_start, t_stop, t_step):
        """Inclusive ranges, e.g. ``from_ranges(1000, 10000, 500, 10, 100, 10)``."""
        if s_step < 1 or t_step < 1:
            raise ConfigError("grid steps must be >= 1")
        return cls(tuple(range(s_start, s_stop + 1, s_step)),
                   tuple(range(t_start, t_stop + 1, t_step)))

    def cells(self):
        for s in self.epoch_sizes:
            for t in self.thresholds:
                yield s, t

    def __len__(self):
        return len(self.epoch_sizes) * len(self.thresholds)


@dataclass(frozen=True)
class SweepRow:
    epoch_size: int
    threshold: int
    metrics: Metrics

    def as_csv_fields(self):
        m = self.metrics
        return [self.epoch_size, self.threshold, _fmt_rate(m.tpr), _fmt_rate(m.fpr),
                m.n_tp, m.n_fp, m.n_malicious, m.n_normal]


def _fmt_rate(x):
    return "" if x is None else f"{x:.6f}"


def rows_to_csv(rows: Iterable[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow(row.as_csv_fields())
    return buf.getvalue()


def read_sweep_csv(text: str) -> List[dict]:
    """Parse sweep CSV back into dicts; empty rates become None."""
    out = []
    for rec in csv.DictReader(io.StringIO(text)):
        out.append({
            "S": int(rec["S"]),
            "T_d": int(rec["T_d"]),
            "tpr": float(rec["tpr"]) if rec["tpr"] else None,
            "fpr": float(rec["fpr"]) if rec["fpr"] else None,
            **{k: int(rec[k]) for k in ("n_tp", "n_fp", "n_malicious", "n_normal")},
        })
    return out


class EncodedTrace:
    """A trace split into a clean training prefix and a detection remainder,
    pre-reduced for fast repeated detection runs.

    Windows never reset inside the remainder, so the bag at every position is
    independent of S and T_d.  Each distinct bag gets an integer id once;
    a sweep cell then only tracks which ids the database knows.
    """

    def __init__(self, items: Iterable, train_events: int, k: int = DEFAULT_K,
                 index_map: Optional[IndexMap] = None):
        it = iter(items)
        prefix = []
        for item in it:
            if type(item) is SyscallEvent:
                prefix.append(item)
                if len(prefix) == train_events:
                    break
            elif type(item) is Marker:
                raise MarkerInTraining(
                    f"attack marker at event {item.seq} inside the training prefix")
        if index_map is None:
            index_map = build_index(build_census(prefix))
        self.index_map = index_map
        self.k = k
        self.train_events = train_events
        self.base_db = train(prefix, DetectorConfig(k=k, epoch_size=max(k, 1),
                                                    train_events=train_events), index_map)
        self.remainder = []
        self._encode(it)

    def _encode(self, it):
        window = SlidingWindow(self.k, self.index_map.vector_len)
        lookup = self.index_map.lookup
        ids_of = {}
        bag_ids = []
        flags = []
        in_attack = False
        for item in it:
            kind = type(item)
            if kind is SyscallEvent:
                self.remainder.append(item)
                bag = window.push(lookup(item.name))
                if bag is None:
                    bag_ids.append(-1)
                else:
                    bag_ids.append(ids_of.setdefault(bag, len(ids_of)))
                flags.append(in_attack)
            elif kind is Marker:
                self.remainder.append(item)
                starting = item.kind == ATTACK_START
                if starting == in_attack:
                    raise MarkerOrderError(f"unbalanced attack marker at event {item.seq}")
                in_attack = starting
        self.bag_ids = np.asarray(bag_ids, dtype=np.int64)
        self.attack = np.asarray(flags, dtype=bool)
        table = self.base_db.table
        self.known0 = np.zeros(len(ids_of), dtype=bool)
        for bag, i in ids_of.items():
            self.known0[i] = bag in table
        self.n_distinct = len(ids_of)

    def __len__(self):
        return len(self.bag_ids)

    def run(self, epoch_size: int, threshold: int,
            continuous_training: bool = True) -> List[EpochVerdict]:
        """Verdicts identical to run_detection on a fresh copy of the
        trained database."""
        DetectorConfig(k=self.k, epoch_size=epoch_size, threshold=threshold)
        known = self.known0.copy()
        ids = self.bag_ids
        verdicts = []
        n = len(ids)
        for e, start in enumerate(range(0, n, epoch_size)):
            seg = ids[start:start + epoch_size]
            seg = seg[seg >= 0]
            mismatches = int(np.count_nonzero(~known[seg]))
            anomalous = mismatches > threshold
            if continuous_training and not anomalous:
                known[seg] = True
            verdicts.append(EpochVerdict(
                epoch_index=e,
                events_in_epoch=min(epoch_size, n - start),
                mismatches=mismatches,
                anomalous=anomalous,
                attack_overlap=bool(self.attack[start:start + epoch_size].any()),
            ))
        return verdicts

    def run_direct(self, epoch_size: int, threshold: int,
                   continuous_training: bool = True) -> List[EpochVerdict]:
        """Same result through the streaming detector; the reference path."""
        config = DetectorConfig(k=self.k, epoch_size=epoch_size, threshold=threshold,
                                continuous_training=continuous_training)
        return run_detection(self.remainder, self.base_db.copy(), config,
                             self.index_map).verdicts


def sweep(items: Iterable, train_events: int, grid: SweepGrid = None, *, k: int = DEFAULT_K,
          index_map: Optional[IndexMap] = None, continuous_training: bool = True,
          direct: bool = False) -> List[SweepRow]:
    """Score every (S, T_d) cell, each from a fresh database trained on the
    same prefix.  Rows come out in grid order."""
    grid = grid or SweepGrid()
    enc = items if isinstance(items, EncodedTrace) else EncodedTrace(
        items, train_events, k, index_map)
    log.info("sweep over %d detection events, %d distinct bags, %d cells",
             len(enc), enc.n_distinct, len(grid))
    runner = enc.run_direct if direct else enc.run
    rows = []
    for s, t in grid.cells():
        verdicts = runner(s, t, continuous_training)
        rows.append(SweepRow(s, t, compute_metrics(verdicts, epoch_size=s)))
    return rows


def sweep_file(path, train_events: int, grid: SweepGrid = None, **kwargs) -> List[SweepRow]:
    return sweep(open_stream(path), train_events, grid, **kwargs)


def read_verdicts(lines: Iterable[str]) -> List[EpochVerdict]:
    return [EpochVerdict.from_line(line) for line in lines if line.strip()]
