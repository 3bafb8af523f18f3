"""Frequency-ranked syscall -> index table with a trailing "other" bucket."""

import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List

from boscwatch.errors import EmptyTrace, FormatError
from boscwatch.strace import SyscallEvent

OTHER = "other"


@dataclass(frozen=True)
class SyscallCensus:
    counts: Dict[str, int]
    total_events: int

    @property
    def distinct(self) -> int:
        return len(self.counts)


def build_census(events: Iterable) -> SyscallCensus:
    """Count syscall names.  Accepts parsed items (markers and ignored lines
    are skipped) or bare name strings."""
    counts = Counter(e if isinstance(e, str) else e.name
                     for e in events if isinstance(e, (str, SyscallEvent)))
    total = sum(counts.values())
    if total == 0:
        raise EmptyTrace("cannot build a syscall index from an empty trace")
    return SyscallCensus(dict(counts), total)


@dataclass(frozen=True)
class IndexMap:
    """Immutable name -> dense index map.

    ``names[i]`` is the syscall owning index ``i``; the "other" bucket
    always sits at ``vector_len - 1`` even when nothing folds into it.
    """

    names: tuple
    entries: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if OTHER in self.names:
            raise ValueError('"other" is reserved for the fold-in bucket')
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate syscall names in index map")
        object.__setattr__(self, "entries", {n: i for i, n in enumerate(self.names)})

    @property
    def n_retained(self) -> int:
        return len(self.names)

    @property
    def vector_len(self) -> int:
        return len(self.names) + 1

    @property
    def other_index(self) -> int:
        return len(self.names)

    def lookup(self, name: str) -> int:
        return self.entries.get(name, len(self.names))

    def __contains__(self, name):
        return name in self.entries

    def items(self) -> List[tuple]:
        return [(n, i) for i, n in enumerate(self.names)] + [(OTHER, self.other_index)]

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.dumps())

    def dumps(self) -> str:
        return "".join(f"{name},{idx}\n" for name, idx in self.items())

    @classmethod
    def load(cls, path) -> "IndexMap":
        with open(path, encoding="utf-8") as f:
            return cls.loads(f.read(), path=os.fspath(path))

    @classmethod
    def loads(cls, text: str, path=None) -> "IndexMap":
        rows = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise FormatError(f"expected <name>,<index>, got {line!r}", path, lineno)
            name, raw_idx = parts[0].strip(), parts[1].strip()
            try:
                idx = int(raw_idx)
            except ValueError:
                raise FormatError(f"non-integer index {raw_idx!r}", path, lineno) from None
            if idx != len(rows):
                raise FormatError(f"index {idx} out of order, expected {len(rows)}",
                                  path, lineno)
            rows.append((name, lineno))
        if not rows or rows[-1][0] != OTHER:
            raise FormatError('index file must end with the "other" entry', path)
        names = tuple(n for n, _ in rows[:-1])
        for name, lineno in rows[:-1]:
            if name == OTHER:
                raise FormatError('"other" must be the last entry', path, lineno)
        try:
            return cls(names)
        except ValueError as e:
            raise FormatError(str(e), path) from None


def lookup(index_map: IndexMap, name: str) -> int:
    return index_map.lookup(name)


def build_index(census: SyscallCensus) -> IndexMap:
    """Keep names seen at least as often as there are distinct names.

    Retained names are ranked by descending count, ties by name; everything
    rarer shares the final "other" slot.
    """
    if census.total_events == 0 or not census.counts:
        raise EmptyTrace("cannot build a syscall index from an empty census")
    distinct = census.distinct
    retained = [n for n, c in census.counts.items() if c >= distinct and n != OTHER]
    retained.sort(key=lambda n: (-census.counts[n], n))
    return IndexMap(tuple(retained))
