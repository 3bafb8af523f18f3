import random

import pytest
from hypothesis import given, settings, strategies as st

from boscwatch import synth
from boscwatch.db import NormalBehaviorDb
from boscwatch.detector import (
    DetectorConfig,
    EpochVerdict,
    detect_epoch,
    run_detection,
    train,
)
from boscwatch.errors import (
    ConfigError,
    FormatError,
    InsufficientTrainingData,
    MarkerInTraining,
    MarkerOrderError,
)
from boscwatch.strace import ATTACK_END, ATTACK_START, Marker, SyscallEvent, parse_lines
from boscwatch.syscall_index import IndexMap, build_census, build_index
from boscwatch.window import SlidingWindow

ABC = IndexMap(("a", "b", "c"))


def events(names, pid=1):
    return [SyscallEvent(pid, n, i) for i, n in enumerate(names)]


def trained(names, k=2, index_map=ABC):
    return train(events(names), DetectorConfig(k=k, epoch_size=k, train_events=len(names)),
                 index_map)


@pytest.mark.parametrize("kwargs", [
    dict(k=0), dict(k=10, epoch_size=9), dict(threshold=0), dict(k=10, train_events=5),
])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        DetectorConfig(**kwargs)


def test_train_exactly_k_gives_one_bag():
    db = trained(["a", "b"])
    assert db.table == {(1, 1, 0, 0): 1}


def test_train_stops_at_n_and_leaves_rest():
    it = iter(events(["a", "b", "a", "c", "c"]))
    train(it, DetectorConfig(k=2, epoch_size=2, train_events=3), ABC)
    assert [e.name for e in it] == ["c", "c"]


def test_train_errors():
    cfg = DetectorConfig(k=2, epoch_size=2, train_events=4)
    with pytest.raises(InsufficientTrainingData):
        train(events(["a", "b", "a"]), cfg, ABC)
    items = events(["a", "b"]) + [Marker(ATTACK_START, 2)] + events(["a", "b"])
    with pytest.raises(MarkerInTraining):
        train(items, cfg, ABC)


def test_two_epoch_commit_hand_simulation():
    cfg = DetectorConfig(k=2, epoch_size=4, threshold=2)
    db = trained(["a", "b", "a", "b", "a", "b"])
    report = run_detection(events(list("abcc") + list("bcca")), db, cfg, ABC)
    assert [v.mismatches for v in report.verdicts] == [2, 1]
    assert [v.anomalous for v in report.verdicts] == [False, False]
    assert db.table == {(1, 1, 0, 0): 6, (0, 1, 1, 0): 3, (0, 0, 2, 0): 2, (1, 0, 1, 0): 1}

    frozen = trained(["a", "b", "a", "b", "a", "b"])
    off = DetectorConfig(k=2, epoch_size=4, threshold=2, continuous_training=False)
    report = run_detection(events(list("abcc") + list("bcca")), frozen, off, ABC)
    assert [v.mismatches for v in report.verdicts] == [2, 4]
    assert report.verdicts[1].anomalous
    assert frozen.table == {(1, 1, 0, 0): 5}


def test_anomalous_epoch_is_discarded():
    cfg = DetectorConfig(k=2, epoch_size=4, threshold=1)
    db = trained(["a", "b", "a"])
    report = run_detection(events(list("cccc") + list("cccc")), db, cfg, ABC)
    assert [(v.mismatches, v.anomalous) for v in report.verdicts] == [(3, True), (4, True)]
    assert db.table == {(1, 1, 0, 0): 2}


def test_detect_epoch_carries_window():
    db = trained(["a", "b", "a"])
    window = SlidingWindow(2, ABC.vector_len)
    cfg = DetectorConfig(k=2, epoch_size=2)
    v1, d1 = detect_epoch(["a"], db, window, ABC, cfg)
    v2, d2 = detect_epoch(["c"], db, window, ABC, cfg, epoch_index=1)
    assert (v1.mismatches, len(d1)) == (0, 0)
    assert (v2.mismatches, d2.staged) == (1, {(1, 0, 1, 0): 1})


def test_epoch_partition_and_attack_flags():
    names = ["a", "b"] * 7
    items = events(names[:5]) + [Marker(ATTACK_START, 5)] + events(names[5:7])
    items += [Marker(ATTACK_END, 7)] + events(names[7:])
    db = trained(["a", "b", "a"])
    report = run_detection(items, db, DetectorConfig(k=2, epoch_size=4), ABC)
    assert [v.events_in_epoch for v in report.verdicts] == [4, 4, 4, 2]
    assert [v.attack_overlap for v in report.verdicts] == [False, True, False, False]
    assert report.total_events == 14
    assert [v.epoch_index for v in report.verdicts] == [0, 1, 2, 3]


@pytest.mark.parametrize("items", [
    [Marker(ATTACK_END, 0)],
    [Marker(ATTACK_START, 0), Marker(ATTACK_START, 0)],
])
def test_marker_order_errors(items):
    db = trained(["a", "b"])
    with pytest.raises(MarkerOrderError):
        run_detection(items, db, DetectorConfig(k=2, epoch_size=2), ABC)


def test_verdict_line_round_trip():
    v = EpochVerdict(3, 1000, 17, True, False)
    assert v.to_line() == "epoch,3,events,1000,mismatches,17,anomalous,1,attack,0"
    assert EpochVerdict.from_line(v.to_line()) == v
    with pytest.raises(FormatError):
        EpochVerdict.from_line("epoch,3,events,x")


def test_closure_on_synthetic_trace():
    names, _ = synth.generate_names(synth.default_workload(seed=5), [], 20_000)
    idx = build_index(build_census(names))
    cfg = DetectorConfig(epoch_size=1000, threshold=10, train_events=len(names))
    db = train(events(names), cfg, idx)
    report = run_detection(events(names), db, cfg, idx)
    assert all(v.mismatches == 0 for v in report.verdicts)
    assert not report.anomalous


@pytest.mark.parametrize("period", [3, 8, 13])
def test_periodic_db_size_bounded(period):
    motif = [f"s{i % 5}" for i in range(period)]
    wl = synth.WorkloadModel(sorted(set(motif)), [1] * len(set(motif)), [motif], noise=0)
    names, _ = synth.generate_names(wl, [], 50 * period)
    idx = build_index(build_census(names))
    # any full period after warm-up covers every distinct window
    n_train = 10 + period
    cfg = DetectorConfig(epoch_size=10, train_events=n_train)
    db = train(events(names), cfg, idx)
    distinct = {tuple(names[i:i + 10]) for i in range(len(names) - 9)}
    assert len(db) <= period and len(distinct) <= period
    rest = events(names[n_train:])
    report = run_detection(rest, db, DetectorConfig(epoch_size=10, threshold=1), idx)
    assert report.total_mismatches == 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 6), st.integers(2, 6))
def test_higher_threshold_flags_subset(seed, t1, gap):
    rng = random.Random(seed)
    train_names = [rng.choice("aab") for _ in range(60)]
    test_names = [rng.choice("aabbc") for _ in range(400)]
    t2 = t1 + gap
    flags = []
    for t in (t1, t2):
        db = trained(train_names, k=3)
        cfg = DetectorConfig(k=3, epoch_size=20, threshold=t)
        flags.append([v.anomalous for v in run_detection(events(test_names), db, cfg, ABC).verdicts])
    assert all(lo or not hi for lo, hi in zip(*flags))


def test_detector_accepts_parsed_lines():
    lines = ["1 a() = 0", "1 --- SIGCHLD ---", "1 b() = 0", "1 c() = 0"]
    db = trained(["a", "b"])
    report = run_detection(parse_lines(lines), db, DetectorConfig(k=2, epoch_size=2), ABC)
    assert [v.mismatches for v in report.verdicts] == [0, 1]
    assert isinstance(report.db_size_final, int)


def test_db_mismatch_rejected():
    with pytest.raises(ConfigError):
        run_detection([], NormalBehaviorDb(3, 4), DetectorConfig(k=2, epoch_size=2), ABC)
