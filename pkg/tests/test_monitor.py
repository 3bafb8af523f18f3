import os
import sys
import time

import pytest

from boscwatch import synth
from boscwatch.detector import DetectorConfig, run_detection, train
from boscwatch.errors import (
    EmptyTaskList,
    SessionExists,
    SourceClosed,
    TasksFileMissing,
    TracerSpawnFailure,
)
from boscwatch.monitor import (
    START,
    STOP,
    CommandEventSource,
    ContainerEvent,
    MonitorConfig,
    SessionManager,
    parse_event_line,
    pipelined,
    resolve_tasks,
    start_session,
    tracer_argv,
    watch_events,
)
from boscwatch.strace import iter_events, open_stream, parse_lines
from boscwatch.syscall_index import build_census, build_index

STUB = os.path.join(os.path.dirname(__file__), "stub_tracer.py")
CID = "4f1c0ffee0ddba11"


def test_parse_json_event():
    line = '{"Type":"container","Action":"start","Actor":{"ID":"%s"},"timeNano":17}' % CID
    assert parse_event_line(line) == ContainerEvent(CID, START, "17")
    assert parse_event_line('{"status":"die","id":"abc"}') == ContainerEvent("abc", STOP, None)
    assert parse_event_line('{"Type":"network","Action":"connect","id":"x"}') is None
    assert parse_event_line('{"Type":"container","Action":"exec_start: sh","id":"x"}') is None
    assert parse_event_line("{not json") is None


def test_parse_text_event():
    line = f"2024-05-01T10:00:00.000000000Z container start {CID} (image=mysql:8, name=db)"
    assert parse_event_line(line) == ContainerEvent(CID, START, "2024-05-01T10:00:00.000000000Z")
    assert parse_event_line(f"t container kill {CID} (signal=15)").action == STOP
    assert parse_event_line("t image pull mysql:8") is None
    assert list(watch_events(["", "junk", f"t container stop {CID}"])) == [
        ContainerEvent(CID, STOP, "t")]


def make_cgroup(root, cid=CID, name="tasks", pids=(101, 102)):
    d = root / cid
    d.mkdir(parents=True)
    (d / name).write_text("".join(f"{p}\n" for p in pids))
    return root


def test_resolve_tasks(tmp_path):
    make_cgroup(tmp_path)
    assert resolve_tasks(CID, tmp_path) == [101, 102]
    make_cgroup(tmp_path, "procsonly", "cgroup.procs", (7,))
    assert resolve_tasks("procsonly", tmp_path) == [7]
    with pytest.raises(TasksFileMissing):
        resolve_tasks("absent", tmp_path)
    make_cgroup(tmp_path, "empty", pids=())
    with pytest.raises(EmptyTaskList):
        resolve_tasks("empty", tmp_path)


def test_tracer_argv():
    argv = tracer_argv("strace -f -o {out} {pids}", [5, 6], "/tmp/x.trace")
    assert argv == ["strace", "-f", "-o", "/tmp/x.trace", "-p", "5", "-p", "6"]
    assert tracer_argv("t --pids={pid_list}", [5, 6], "o") == ["t", "--pids=5,6"]


def test_spawn_failure(tmp_path):
    with pytest.raises(TracerSpawnFailure) as info:
        start_session([1], tmp_path / "t", "/nonexistent/tracer -o {out} {pids}")
    assert info.value.command[0] == "/nonexistent/tracer"
    with pytest.raises(EmptyTaskList):
        start_session([], tmp_path / "t")


def test_command_event_source_closed():
    src = CommandEventSource(f"{sys.executable} -c \"print('t container start abc')\"")
    it = iter(src)
    assert next(it).strip() == "t container start abc"
    with pytest.raises(SourceClosed):
        next(it)
    with pytest.raises(SourceClosed):
        list(CommandEventSource("/nonexistent/events"))


def test_pipelined_propagates_errors():
    def boom():
        yield 1
        raise ValueError("producer")

    it = pipelined(boom())
    assert next(it) == 1
    with pytest.raises(ValueError):
        next(it)
    assert list(pipelined(range(10000), maxsize=8)) == list(range(10000))


@pytest.fixture(scope="module")
def model(tmp_path_factory):
    base = tmp_path_factory.mktemp("model")
    wl = synth.default_workload(seed=21)
    clean = list(parse_lines(synth.generate(wl, [], 20_000).splitlines()))
    idx = build_index(build_census(iter_events(clean)))
    cfg = DetectorConfig(epoch_size=500, threshold=10, train_events=20_000)
    db = train(clean, cfg, idx)
    fixture = base / "stub.trace"
    synth.generate(synth.default_workload(seed=22),
                   [synth.AttackModel(synth.NOVEL_CALLS, 150, 4_100)], 8_000, path=fixture)
    return idx, db, cfg, fixture


def manager_for(tmp_path, model, linger=0.0):
    idx, db, cfg, fixture = model
    make_cgroup(tmp_path / "cg")
    template = (f"{sys.executable} {STUB} --fixture {fixture} --linger {linger} "
                "-o {out} {pids}")
    conf = MonitorConfig(events_command="unused", cgroup_root=str(tmp_path / "cg"),
                         tracer_template=template, trace_dir=str(tmp_path))
    return SessionManager(conf, db, idx, cfg, poll_interval=0.005)


def test_online_session_matches_offline(tmp_path, model):
    idx, db, cfg, fixture = model
    manager = manager_for(tmp_path, model)
    seen = []
    manager.on_verdict = lambda cid, v: seen.append((cid, v))

    def events():
        yield f"t container start {CID}"
        proc = manager.sessions[CID].session.tracer_handle
        proc.wait(10)
        yield f"t container die {CID}"

    manager.run(events())
    online = manager.sessions[CID]
    assert online.error is None
    offline = run_detection(open_stream(tmp_path / f"{CID}.trace"), db.copy(), cfg, idx).verdicts
    assert online.verdicts == offline
    assert [v for _, v in seen] == offline
    assert any(v.anomalous and v.attack_overlap for v in offline)
    assert db == model[1]  # the shared model is never mutated by a session


def test_one_session_per_container(tmp_path, model):
    manager = manager_for(tmp_path, model, linger=5.0)
    manager.start(CID)
    try:
        with pytest.raises(SessionExists):
            manager.start(CID)
        assert manager.handle(ContainerEvent(CID, START)) is None
        assert manager.handle(ContainerEvent("ghost", START)) is None
    finally:
        t0 = time.monotonic()
        manager.stop_all()
        assert manager.sessions[CID].join(5)
        assert time.monotonic() - t0 < 5
