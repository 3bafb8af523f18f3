"""Container-start triggered tracing feeding online detection.

Everything touching the host goes through something injectable: the event
source is any iterable of lines, the cgroup root is a plain directory, and
the tracer is launched through a ``spawn`` callable (``subprocess.Popen``
by default).  The tracer itself is always an external process.
"""

import json
import logging
import os
import queue
import shlex
import subprocess
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Iterator, List, Optional

from boscwatch.db import NormalBehaviorDb
from boscwatch.detector import Detector, DetectorConfig, EpochVerdict
from boscwatch.errors import (
    BoscwatchError,
    EmptyTaskList,
    SessionExists,
    SourceClosed,
    TasksFileMissing,
    TracerSpawnFailure,
)
from boscwatch.strace import open_stream
from boscwatch.syscall_index import IndexMap

log = logging.getLogger(__name__)

DEFAULT_CGROUP_ROOT = "/sys/fs/cgroup/devices/docker"
DEFAULT_EVENTS_COMMAND = "docker events --filter type=container --format '{{json .}}'"
DEFAULT_TRACER_TEMPLATE = "strace -f -o {out} {pids}"

START = "start"
STOP = "stop"
_STOP_ACTIONS = {"stop", "die", "kill"}


@dataclass(frozen=True)
class ContainerEvent:
    container_id: str
    action: str
    time: Optional[str] = None

    def __post_init__(self):
        if not self.container_id:
            raise ValueError("container id must be non-empty")


def parse_event_line(line: str) -> Optional[ContainerEvent]:
    """Parse one runtime event line; None when it is not a start/stop event.

    Accepts the JSON form (``--format '{{json .}}'``) and the default text
    form ``<time> container <action> <id> (attrs...)``.
    """
    line = line.strip()
    if not line:
        return None
    if line.startswith("{"):
        try:
            rec = json.loads(line)
        except ValueError:
            return None
        if not isinstance(rec, dict):
            return None
        if rec.get("Type", "container") != "container":
            return None
        action = rec.get("Action") or rec.get("status")
        cid = rec.get("id") or (rec.get("Actor") or {}).get("ID")
        when = rec.get("timeNano") or rec.get("time")
        when = None if when is None else str(when)
    else:
        parts = line.split()
        if len(parts) < 4 or parts[1] != "container":
            return None
        when, action, cid = parts[0], parts[2], parts[3]
    if not isinstance(action, str) or not isinstance(cid, str) or not cid:
        return None
    action = action.split(":", 1)[0]
    if action == START:
        return ContainerEvent(cid, START, when)
    if action in _STOP_ACTIONS:
        return ContainerEvent(cid, STOP, when)
    return None


def watch_events(source: Iterable[str]) -> Iterator[ContainerEvent]:
    for line in source:
        event = parse_event_line(line)
        if event is None:
            if line.strip():
                log.debug("ignoring event line %r", line.strip())
            continue
        yield event


class CommandEventSource:
    """Lines from a long-running events command.  Raises SourceClosed when the
    command goes away, since a watcher's source is never supposed to end."""

    def __init__(self, command: str, spawn=subprocess.Popen):
        self.command = command
        self._spawn = spawn
        self.proc = None

    def __iter__(self):
        try:
            self.proc = self._spawn(shlex.split(self.command), stdout=subprocess.PIPE,
                                    text=True)
        except OSError as e:
            raise SourceClosed(f"cannot run events command {self.command!r}: {e}") from None
        for line in self.proc.stdout:
            yield line
        status = self.proc.wait()
        raise SourceClosed(f"events command exited with status {status}")

    def close(self):
        if self.proc is not None and self.proc.poll() is None:
            self.proc.terminate()


def resolve_tasks(container_id: str, cgroup_root=DEFAULT_CGROUP_ROOT) -> List[int]:
    """Process ids listed in the container's cgroup ``tasks`` file
    (``cgroup.procs`` on hosts that only have that)."""
    base = os.path.join(os.fspath(cgroup_root), container_id)
    for name in ("tasks", "cgroup.procs"):
        path = os.path.join(base, name)
        try:
            with open(path, encoding="ascii") as f:
                text = f.read()
            break
        except FileNotFoundError:
            continue
    else:
        raise TasksFileMissing(f"no tasks file under {base}")
    pids = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if not line.isdigit():
            raise TasksFileMissing(f"{path}:{lineno}: not a pid: {line!r}")
        pids.append(int(line))
    if not pids:
        raise EmptyTaskList(f"{path} lists no tasks")
    return pids


def tracer_argv(template: str, pids: List[int], out) -> List[str]:
    """Expand a tracer command template.

    ``{pids}`` as a whole word becomes ``-p <pid>`` per task, ``{pid_list}``
    a comma-separated list, and ``{out}`` the trace file path.
    """
    argv = []
    for token in shlex.split(template):
        if token == "{pids}":
            for pid in pids:
                argv += ["-p", str(pid)]
        else:
            argv.append(token.replace("{out}", os.fspath(out))
                        .replace("{pid_list}", ",".join(map(str, pids))))
    return argv


@dataclass
class TraceSession:
    container_id: str
    task_ids: List[int]
    trace_path: str
    tracer_handle: object
    stop_event: threading.Event = field(default_factory=threading.Event)

    def stop(self, timeout: float = 5.0):
        """Terminate the tracer and let the online stream drain and end."""
        proc = self.tracer_handle
        if proc.poll() is None:
            proc.terminate()
            try:
                proc.wait(timeout)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()
        self.stop_event.set()

    @property
    def running(self) -> bool:
        return self.tracer_handle.poll() is None


def start_session(tasks: List[int], trace_path, tracer_command_template: str = DEFAULT_TRACER_TEMPLATE,
                  container_id: str = "", spawn: Callable = subprocess.Popen) -> TraceSession:
    if not tasks:
        raise EmptyTaskList("no tasks to trace")
    argv = tracer_argv(tracer_command_template, tasks, trace_path)
    try:
        proc = spawn(argv, stdin=subprocess.DEVNULL)
    except OSError as e:
        raise TracerSpawnFailure(f"cannot start tracer ({e})", argv) from None
    log.info("tracing %s tasks %s into %s", container_id or "?", tasks, trace_path)
    return TraceSession(container_id, list(tasks), os.fspath(trace_path), proc)


def pipelined(items: Iterable, maxsize: int = 4096) -> Iterator:
    """Iterate ``items`` on a producer thread, handing them over a bounded
    queue.  Producer exceptions are re-raised in the consumer."""
    q = queue.Queue(maxsize)
    done = object()
    failure = []

    def produce():
        try:
            for item in items:
                q.put(item)
        except BaseException as e:  # handed to the consumer
            failure.append(e)
        finally:
            q.put(done)

    t = threading.Thread(target=produce, name="boscwatch-parser", daemon=True)
    t.start()
    while True:
        item = q.get()
        if item is done:
            break
        yield item
    t.join()
    if failure:
        raise failure[0]


class OnlineDetection:
    """Online stream -> detector, run on its own thread for one session."""

    def __init__(self, session: TraceSession, db: NormalBehaviorDb, index_map: IndexMap,
                 config: DetectorConfig, on_verdict: Callable = None,
                 poll_interval: float = 0.05, wait: float = 10.0):
        self.session = session
        self.detector = Detector(db, index_map, config)
        self.verdicts: List[EpochVerdict] = []
        self.error = None
        self._on_verdict = on_verdict
        self._stream = open_stream(session.trace_path, "online", poll_interval=poll_interval,
                                   wait=wait, stop=session.stop_event)
        self._thread = threading.Thread(target=self._run, daemon=True,
                                        name=f"boscwatch-{session.container_id[:12]}")
        self._reaper = threading.Thread(target=self._reap, daemon=True)

    def start(self):
        self._thread.start()
        self._reaper.start()
        return self

    def _reap(self):
        # a tracer that exits on its own (container gone) finalizes the trace
        self.session.tracer_handle.wait()
        self.session.stop_event.set()

    def _run(self):
        try:
            for verdict in self.detector.run(pipelined(self._stream)):
                self.verdicts.append(verdict)
                if verdict.anomalous:
                    log.warning("container %s epoch %d anomalous: %d mismatches",
                                self.session.container_id, verdict.epoch_index,
                                verdict.mismatches)
                if self._on_verdict is not None:
                    self._on_verdict(self.session.container_id, verdict)
        except Exception as e:
            log.exception("detection for %s failed", self.session.container_id)
            self.error = e

    def join(self, timeout: Optional[float] = None):
        self._thread.join(timeout)
        return not self._thread.is_alive()


@dataclass
class MonitorConfig:
    events_command: str = DEFAULT_EVENTS_COMMAND
    cgroup_root: str = DEFAULT_CGROUP_ROOT
    tracer_template: str = DEFAULT_TRACER_TEMPLATE
    trace_dir: str = "."


class SessionManager:
    """One tracing session plus online detection per running container."""

    def __init__(self, config: MonitorConfig, db: NormalBehaviorDb, index_map: IndexMap,
                 detector_config: DetectorConfig, spawn: Callable = subprocess.Popen,
                 on_verdict: Callable = None, poll_interval: float = 0.05):
        self.config = config
        self.db = db
        self.index_map = index_map
        self.detector_config = detector_config
        self.spawn = spawn
        self.on_verdict = on_verdict
        self.poll_interval = poll_interval
        self.sessions: Dict[str, OnlineDetection] = {}
        self._lock = threading.Lock()

    def handle(self, event: ContainerEvent) -> Optional[OnlineDetection]:
        if event.action == START:
            try:
                return self.start(event.container_id)
            except SessionExists as e:
                log.warning("%s", e)
            except BoscwatchError as e:
                log.error("cannot trace container %s: %s", event.container_id, e)
            return None
        self.stop(event.container_id)
        return None

    def start(self, container_id: str) -> OnlineDetection:
        with self._lock:
            live = self.sessions.get(container_id)
            if live is not None and live.session.running:
                raise SessionExists(f"container {container_id} is already traced")
            tasks = resolve_tasks(container_id, self.config.cgroup_root)
            path = os.path.join(self.config.trace_dir, f"{container_id}.trace")
            session = start_session(tasks, path, self.config.tracer_template,
                                    container_id, spawn=self.spawn)
            online = OnlineDetection(session, self.db.copy(), self.index_map,
                                     self.detector_config, self.on_verdict,
                                     poll_interval=self.poll_interval)
            self.sessions[container_id] = online
        return online.start()

    def stop(self, container_id: str):
        with self._lock:
            online = self.sessions.get(container_id)
        if online is None:
            log.debug("stop for untraced container %s", container_id)
            return
        online.session.stop()

    def stop_all(self):
        for cid in list(self.sessions):
            self.stop(cid)

    def run(self, source: Iterable[str]):
        """Handle events until the source ends or raises SourceClosed."""
        try:
            for event in watch_events(source):
                self.handle(event)
        finally:
            self.stop_all()
            for online in self.sessions.values():
                online.join()
