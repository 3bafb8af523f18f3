"""Seeded synthetic traces: a motif-replay workload with injected attacks.

The output is tracer-format text, so it goes through the same parser as a
real capture.  Each attack span is bracketed by marker lines.
"""

import json
import random
from dataclasses import asdict, dataclass, field
from typing import List, Sequence, Tuple

from boscwatch.errors import ConfigError, OverlappingAttacks, SpanOutOfRange
from boscwatch.strace import MARKER_END, MARKER_START

NOVEL_CALLS = "novel_calls"
SHUFFLED_MOTIFS = "shuffled_motifs"
BURST = "burst"
ATTACK_VARIANTS = (NOVEL_CALLS, SHUFFLED_MOTIFS, BURST)

# calls a database server never issues under normal load
NOVEL_POOL = (
    "execve", "ptrace", "setuid", "setgid", "chmod", "chown", "mount", "kill",
    "socketpair", "clone3", "unshare", "setns", "pivot_root", "init_module",
    "keyctl", "add_key", "personality", "prctl", "capset", "symlink",
)

_ARGS = {
    "read": '{fd}, "\\3\\0\\0\\0\\3SELECT", 16384',
    "write": '{fd}, "\\7\\0\\0\\1\\0\\0\\0", 11',
    "pread64": '{fd}, "\\0\\0\\0\\0"..., 16384, {off}',
    "pwrite64": '{fd}, "\\0\\0\\0\\0"..., 16384, {off}',
    "sendto": '{fd}, "\\1\\0\\0\\1", 5, MSG_DONTWAIT, NULL, 0',
    "recvfrom": '{fd}, "\\3\\0\\0\\0", 4, MSG_DONTWAIT, NULL, NULL',
    "futex": "0x7f3a{addr:08x}, FUTEX_WAKE_PRIVATE, 1",
    "poll": "[{{fd={fd}, events=POLLIN}}], 1, 28800000",
    "select": "{fd}, [{fd}], NULL, NULL, {{tv_sec=1, tv_usec=0}}",
    "lseek": "{fd}, {off}, SEEK_SET",
    "fsync": "{fd}",
    "fdatasync": "{fd}",
    "openat": 'AT_FDCWD, "./ibdata1", O_RDWR',
    "close": "{fd}",
    "fstat": "{fd}, {{st_mode=S_IFREG|0660, st_size={off}, ...}}",
    "access": '"./mysql/user.frm", F_OK',
}
_DEFAULT_ARGS = "{fd}, 0x7ffd{addr:08x}, 4096"


@dataclass
class WorkloadModel:
    """Normal behavior: weighted motifs replayed back to back.

    Each replayed event is replaced, with probability ``noise``, by a name
    drawn from ``alphabet`` according to ``weights``.
    """

    alphabet: List[str]
    weights: List[float]
    motifs: List[List[str]]
    motif_weights: List[float] = None
    noise: float = 0.01
    seed: int = 0
    pids: List[int] = field(default_factory=lambda: [1201, 1202, 1203, 1204])
    interleave: float = 0.002

    def __post_init__(self):
        if not self.alphabet or len(self.alphabet) != len(self.weights):
            raise ConfigError("alphabet and weights must be non-empty and equally long")
        if any(w <= 0 for w in self.weights):
            raise ConfigError("alphabet weights must be positive")
        if not self.motifs or any(not m for m in self.motifs):
            raise ConfigError("motifs must be non-empty sequences")
        if self.motif_weights is None:
            self.motif_weights = [1.0] * len(self.motifs)
        if len(self.motif_weights) != len(self.motifs) or any(w <= 0 for w in self.motif_weights):
            raise ConfigError("motif weights must be positive, one per motif")
        if not 0 <= self.noise < 1:
            raise ConfigError(f"noise probability must be in [0, 1), got {self.noise}")
        if not self.pids:
            raise ConfigError("at least one pid is required")

    @property
    def names(self):
        seen = dict.fromkeys(self.alphabet)
        for motif in self.motifs:
            seen.update(dict.fromkeys(motif))
        return list(seen)


@dataclass
class AttackModel:
    variant: str
    length: int
    position: int

    def __post_init__(self):
        if self.variant not in ATTACK_VARIANTS:
            raise ConfigError(f"unknown attack variant {self.variant!r}")
        if self.length < 1:
            raise ConfigError(f"attack length must be >= 1, got {self.length}")
        if self.position < 0:
            raise SpanOutOfRange(f"attack position must be >= 0, got {self.position}")

    @property
    def end(self):
        return self.position + self.length


def default_workload(seed: int = 0, noise: float = 0.01) -> WorkloadModel:
    """A query-serving loop loosely shaped like a database server."""
    motifs = [
        ["poll", "recvfrom", "read", "futex", "pread64", "futex", "sendto", "futex"],
        ["poll", "recvfrom", "read", "futex", "pwrite64", "fsync", "futex", "sendto"],
        ["futex", "futex", "pread64", "pread64", "futex", "sendto", "poll", "recvfrom"],
        ["lseek", "read", "lseek", "write", "futex", "futex", "sendto", "poll"],
        ["select", "futex", "futex", "futex", "select", "futex", "futex", "futex"],
    ]
    motif_weights = [5, 3, 4, 2, 2]
    alphabet = ["futex", "read", "sendto", "poll", "recvfrom", "pread64", "write",
                "lseek", "pwrite64", "select", "fsync", "access"]
    weights = [20, 10, 8, 8, 8, 6, 4, 3, 3, 2, 1, 1]
    return WorkloadModel(alphabet, weights, motifs, motif_weights, noise=noise, seed=seed)


def _check_attacks(attacks: Sequence[AttackModel], total_events: int):
    spans = sorted(attacks, key=lambda a: a.position)
    for a in spans:
        if a.end > total_events:
            raise SpanOutOfRange(
                f"attack [{a.position}, {a.end}) exceeds {total_events} events")
    for a, b in zip(spans, spans[1:]):
        if b.position < a.end:
            raise OverlappingAttacks(
                f"attacks [{a.position}, {a.end}) and [{b.position}, {b.end}) overlap")
    return spans


def generate_names(workload: WorkloadModel, attacks: Sequence[AttackModel],
                   total_events: int) -> Tuple[List[str], List[Tuple[int, int]]]:
    """Syscall names only, plus the ``(start, end)`` event span of each attack."""
    spans = _check_attacks(attacks, total_events)
    rng = random.Random(workload.seed)
    names = []
    motifs = workload.motifs
    while len(names) < total_events:
        motif = rng.choices(motifs, workload.motif_weights)[0]
        for name in motif:
            if workload.noise and rng.random() < workload.noise:
                name = rng.choices(workload.alphabet, workload.weights)[0]
            names.append(name)
    del names[total_events:]

    normal = workload.names
    novel = [n for n in NOVEL_POOL if n not in normal]
    rare = min(zip(workload.weights, workload.alphabet))[1]
    for attack in spans:
        if attack.variant == NOVEL_CALLS:
            seg = [rng.choice(novel) for _ in range(attack.length)]
        elif attack.variant == SHUFFLED_MOTIFS:
            seg = [rng.choice(normal) for _ in range(attack.length)]
        else:
            seg = [rare] * attack.length
        names[attack.position:attack.end] = seg
    return names, [(a.position, a.end) for a in spans]


def _render(rng, pid, name):
    fmt = _ARGS.get(name, _DEFAULT_ARGS)
    args = fmt.format(fd=rng.randrange(3, 40), off=rng.randrange(0, 1 << 20) * 16,
                      addr=rng.randrange(1 << 32))
    return f"{pid} {name}({args}", f") = {rng.randrange(0, 64)}"


def render_lines(workload: WorkloadModel, names: Sequence[str],
                 spans: Sequence[Tuple[int, int]]) -> List[str]:
    """Tracer-format lines for ``names`` with markers around each span.

    A small fraction of calls is split into unfinished/resumed halves around
    another pid's signal line, and stray signal lines are sprinkled in;
    neither changes the parsed event sequence.
    """
    rng = random.Random(workload.seed ^ 0x5EED)
    starts = {s for s, _ in spans}
    ends = {e for _, e in spans}
    pids = workload.pids
    lines = []
    pid = pids[0]
    for i, name in enumerate(names):
        if i in ends:
            lines.append(MARKER_END)
        if i in starts:
            lines.append(MARKER_START)
        if rng.random() < 0.1:
            pid = rng.choice(pids)
        head, tail = _render(rng, pid, name)
        if len(pids) > 1 and rng.random() < workload.interleave:
            other = rng.choice([p for p in pids if p != pid])
            lines.append(f"{head} <unfinished ...>")
            lines.append(f"{other} --- SIGCHLD {{si_signo=SIGCHLD, si_code=CLD_EXITED}} ---")
            lines.append(f"{pid} <... {name} resumed>{tail}")
            continue
        if rng.random() < 0.0005:
            lines.append(f"{pid} --- SIGALRM {{si_signo=SIGALRM, si_code=SI_KERNEL}} ---")
        lines.append(head + tail)
    if len(names) in ends:
        lines.append(MARKER_END)
    return lines


def generate(workload: WorkloadModel, attacks: Sequence[AttackModel], total_events: int,
             path=None) -> str:
    """Build the trace text; write it (and a JSON manifest beside it) when
    ``path`` is given.  Identical inputs give byte-identical output."""
    names, spans = generate_names(workload, attacks, total_events)
    text = "\n".join(render_lines(workload, names, spans)) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        write_manifest(f"{path}.json", workload, attacks, total_events, spans)
    return text


def write_manifest(path, workload, attacks, total_events, spans):
    manifest = {
        "seed": workload.seed,
        "total_events": total_events,
        "workload": asdict(workload),
        "attacks": [asdict(a) for a in attacks],
        "attack_spans": [list(s) for s in spans],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_spec(path):
    """Read a generator spec (JSON) into ``(workload, attacks, total_events)``.

    Keys: ``total_events``, optional ``workload`` (WorkloadModel fields, or
    ``{"preset": "default", "seed": .., "noise": ..}``) and ``attacks``.
    """
    with open(path, encoding="utf-8") as f:
        spec = json.load(f)
    return spec_from_dict(spec)


def spec_from_dict(spec):
    try:
        total = int(spec["total_events"])
        wl = dict(spec.get("workload", {}))
        if wl.get("preset", "default") == "default" and "alphabet" not in wl:
            workload = default_workload(seed=int(wl.get("seed", 0)),
                                        noise=float(wl.get("noise", 0.01)))
        else:
            wl.pop("preset", None)
            workload = WorkloadModel(**wl)
        attacks = [AttackModel(**a) for a in spec.get("attacks", [])]
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"bad generator spec: {e}") from None
    return workload, attacks, total
