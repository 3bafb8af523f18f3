"""Parsing of child-following tracer output into syscall events and markers.

Lines look like ``1234 sendto(3, "x", 1, 0, NULL, 0) = 1``.  Only the pid
and the syscall name are kept.  Interrupted calls appear as an
``<unfinished ...>`` line followed later by a ``<... name resumed>`` line;
the call is counted once, on the resumed half.
"""

import logging
import os
import re
import threading
import time
from typing import Iterator, NamedTuple, Optional, Union

from boscwatch.errors import FileUnavailable, StreamClosed

log = logging.getLogger(__name__)

MARKER_START = "### BOSCWATCH ATTACK-START"
MARKER_END = "### BOSCWATCH ATTACK-END"
_MARKER_PREFIX = "### BOSCWATCH"

ATTACK_START = "AttackStart"
ATTACK_END = "AttackEnd"

DEFAULT_POLL_INTERVAL = 0.05
DEFAULT_WAIT = 10.0

_PID_RE = re.compile(r"(?:\[pid\s+(\d+)\]|(\d+))\s+")
_CALL_RE = re.compile(r"([a-z_][a-z0-9_]*)\(")
_RESUMED_RE = re.compile(r"<\.\.\.\s+(?:([a-z_][a-z0-9_]*)\s+)?resumed>")


class SyscallEvent(NamedTuple):
    pid: int
    name: str
    seq: int


class Marker(NamedTuple):
    kind: str
    seq: int


class Ignored(NamedTuple):
    reason: str
    seq: int


ParsedItem = Union[SyscallEvent, Marker, Ignored]


def _split_pid(text):
    m = _PID_RE.match(text)
    if m is None:
        return 0, text
    return int(m.group(1) or m.group(2)), text[m.end():]


def _classify(text):
    """Return ``(kind, pid, name)`` for one line without any cross-line state.

    ``kind`` is one of event, unfinished, resumed, marker, or an ignore
    reason.  ``name`` is None for a resumed line that does not repeat the
    syscall name.
    """
    text = text.rstrip("\r\n")
    stripped = text.strip()
    if not stripped:
        return "blank", 0, None
    if stripped.startswith(_MARKER_PREFIX):
        if stripped == MARKER_START:
            return "marker", 0, ATTACK_START
        if stripped == MARKER_END:
            return "marker", 0, ATTACK_END
        return "bad-marker", 0, None

    pid, rest = _split_pid(text.lstrip())
    if rest.startswith("---"):
        return "signal", pid, None
    if rest.startswith("+++"):
        return "exit", pid, None
    if rest.startswith("<..."):
        m = _RESUMED_RE.match(rest)
        if m is None:
            return "unrecognized", pid, None
        return "resumed", pid, m.group(1)
    m = _CALL_RE.match(rest)
    if m is None:
        return "unrecognized", pid, None
    name = m.group(1)
    if rest.rstrip().endswith("<unfinished ...>"):
        return "unfinished", pid, name
    return "event", pid, name


def parse_line(text: str, seq: int) -> ParsedItem:
    """Parse one raw tracer line.

    Pure: the result depends only on the arguments.  A resumed line that
    omits the syscall name cannot be resolved without knowing the pending
    call, so it comes back as ``Ignored("orphan-resume")``; use
    :class:`LineParser` to resolve those from the matching unfinished line.
    """
    kind, pid, name = _classify(text)
    if kind in ("event", "resumed") and name is not None:
        return SyscallEvent(pid, name, seq)
    if kind == "resumed":
        return Ignored("orphan-resume", seq)
    if kind == "marker":
        return Marker(name, seq)
    return Ignored(kind, seq)


class LineParser:
    """Stateful line parser that numbers events and pairs interrupted calls.

    ``seq`` of an emitted event is its 0-based position among events; markers
    and ignored lines carry the seq the next event will get.
    """

    def __init__(self):
        self.seq = 0
        self._pending = {}

    def feed(self, text: str) -> ParsedItem:
        kind, pid, name = _classify(text)
        if kind == "event":
            item = SyscallEvent(pid, name, self.seq)
            self.seq += 1
            return item
        if kind == "unfinished":
            self._pending[pid] = name
            return Ignored("unfinished", self.seq)
        if kind == "resumed":
            pending = self._pending.pop(pid, None)
            if name is None:
                name = pending
            if name is None:
                return Ignored("orphan-resume", self.seq)
            item = SyscallEvent(pid, name, self.seq)
            self.seq += 1
            return item
        if kind == "marker":
            return Marker(name, self.seq)
        return Ignored(kind, self.seq)


def parse_lines(lines) -> Iterator[ParsedItem]:
    parser = LineParser()
    for line in lines:
        yield parser.feed(line)


def _decode(raw: bytes) -> str:
    return raw.decode("utf-8", errors="replace")


class TraceStream:
    """Iterator of parsed items over a trace file.

    Offline streams stop at end of file.  Online streams follow the file as
    it grows and finish once :meth:`close` (or the external ``stop`` event)
    has been signalled and every byte written so far has been consumed.
    """

    def __init__(self, path, mode="offline", *, poll_interval=DEFAULT_POLL_INTERVAL,
                 wait=DEFAULT_WAIT, stop: Optional[threading.Event] = None):
        if mode not in ("offline", "online"):
            raise ValueError(f"unknown stream mode {mode!r}")
        self.path = os.fspath(path)
        self.mode = mode
        self.poll_interval = poll_interval
        self.wait = wait
        self.stop = stop if stop is not None else threading.Event()
        self._iter = None

    def close(self):
        self.stop.set()

    def __iter__(self):
        return self

    def __next__(self) -> ParsedItem:
        if self._iter is None:
            self._iter = parse_lines(self._lines())
        return next(self._iter)

    def _lines(self):
        if self.mode == "offline":
            yield from self._offline_lines()
        else:
            yield from self._online_lines()

    def _offline_lines(self):
        try:
            f = open(self.path, "rb")
        except FileNotFoundError:
            raise FileUnavailable(f"trace file {self.path} does not exist") from None
        with f:
            for raw in f:
                yield _decode(raw)

    def _wait_for_file(self):
        deadline = time.monotonic() + self.wait
        while True:
            try:
                return open(self.path, "rb")
            except FileNotFoundError:
                pass
            if self.stop.is_set():
                raise StreamClosed(f"stopped while waiting for {self.path}")
            if time.monotonic() >= deadline:
                raise FileUnavailable(
                    f"trace file {self.path} did not appear within {self.wait}s")
            time.sleep(self.poll_interval)

    def _online_lines(self):
        f = self._wait_for_file()
        buf = b""
        with f:
            while True:
                # read the stop flag before draining so no write is lost
                stopping = self.stop.is_set()
                chunk = f.read(1 << 16)
                if chunk:
                    buf += chunk
                    *lines, buf = buf.split(b"\n")
                    for raw in lines:
                        yield _decode(raw)
                    continue
                if stopping:
                    break
                time.sleep(self.poll_interval)
        if buf:
            log.debug("flushing unterminated final line of %s", self.path)
            yield _decode(buf)


def open_stream(path, mode="offline", **kwargs) -> TraceStream:
    return TraceStream(path, mode, **kwargs)


def iter_events(items) -> Iterator[SyscallEvent]:
    for item in items:
        if type(item) is SyscallEvent:
            yield item
