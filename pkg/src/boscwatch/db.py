"""Normal-behavior database: BoSC -> frequency, with per-epoch staging."""

import os
import re
from typing import Dict, Iterable

from boscwatch.errors import FormatError, VectorLenMismatch
from boscwatch.window import BoSC

_HEADER_RE = re.compile(r"boscdb,v1,k=(\d+),len=(\d+)")


class NormalBehaviorDb:
    """Exact-key frequency table of bags seen under normal behavior."""

    def __init__(self, k: int, vector_len: int, table: Dict[BoSC, int] = None):
        self.k = k
        self.vector_len = vector_len
        self.table = {} if table is None else table

    def __len__(self):
        return len(self.table)

    def __eq__(self, other):
        if not isinstance(other, NormalBehaviorDb):
            return NotImplemented
        return (self.k, self.vector_len, self.table) == (other.k, other.vector_len, other.table)

    def __repr__(self):
        return f"NormalBehaviorDb(k={self.k}, vector_len={self.vector_len}, size={len(self)})"

    def _check(self, bag):
        if len(bag) != self.vector_len:
            raise VectorLenMismatch(
                f"bag of length {len(bag)} does not fit database of length {self.vector_len}")

    def insert(self, bag: BoSC) -> "NormalBehaviorDb":
        self._check(bag)
        bag = tuple(bag)
        self.table[bag] = self.table.get(bag, 0) + 1
        return self

    def contains(self, bag: BoSC) -> bool:
        self._check(bag)
        return tuple(bag) in self.table

    __contains__ = contains

    def frequency(self, bag: BoSC) -> int:
        return self.table.get(tuple(bag), 0)

    @property
    def total_frequency(self) -> int:
        return sum(self.table.values())

    def commit(self, delta: "EpochDelta") -> "NormalBehaviorDb":
        """Merge ``delta`` additively and empty it."""
        if delta.vector_len != self.vector_len:
            raise VectorLenMismatch(
                f"delta of length {delta.vector_len} does not fit database of "
                f"length {self.vector_len}")
        table = self.table
        for bag, freq in delta.staged.items():
            table[bag] = table.get(bag, 0) + freq
        delta.clear()
        return self

    def copy(self) -> "NormalBehaviorDb":
        return NormalBehaviorDb(self.k, self.vector_len, dict(self.table))

    def dumps(self) -> str:
        lines = [f"boscdb,v1,k={self.k},len={self.vector_len}\n"]
        for bag in sorted(self.table):
            lines.append(f"{','.join(map(str, bag))};{self.table[bag]}\n")
        return "".join(lines)

    def save(self, path):
        tmp = f"{os.fspath(path)}.tmp"
        with open(tmp, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.dumps())
        os.replace(tmp, path)

    @classmethod
    def loads(cls, text: str, path=None) -> "NormalBehaviorDb":
        lines = text.splitlines()
        if not lines:
            raise FormatError("missing boscdb header", path, 1)
        m = _HEADER_RE.fullmatch(lines[0].strip())
        if m is None:
            raise FormatError(f"bad header {lines[0]!r}", path, 1)
        k, vector_len = int(m.group(1)), int(m.group(2))
        table = {}
        for lineno, line in enumerate(lines[1:], 2):
            if not line.strip():
                continue
            key_part, sep, freq_part = line.partition(";")
            if not sep:
                raise FormatError("expected <counts>;<frequency>", path, lineno)
            fields = key_part.split(",")
            if len(fields) != vector_len:
                raise FormatError(f"expected {vector_len} counts, got {len(fields)}",
                                  path, lineno)
            try:
                bag = tuple(int(x) for x in fields)
                freq = int(freq_part)
            except ValueError:
                raise FormatError("non-integer field", path, lineno) from None
            if any(c < 0 for c in bag):
                raise FormatError("negative count", path, lineno)
            if sum(bag) != k:
                raise FormatError(f"counts sum to {sum(bag)}, expected k={k}", path, lineno)
            if freq < 1:
                raise FormatError(f"frequency must be >= 1, got {freq}", path, lineno)
            if bag in table:
                raise FormatError("duplicate bag", path, lineno)
            table[bag] = freq
        return cls(k, vector_len, table)

    @classmethod
    def load(cls, path) -> "NormalBehaviorDb":
        with open(path, encoding="utf-8") as f:
            return cls.loads(f.read(), path=os.fspath(path))


class EpochDelta:
    """Bags seen during the current epoch, committed only if it stays clean."""

    def __init__(self, vector_len: int):
        self.vector_len = vector_len
        self.staged: Dict[BoSC, int] = {}

    def __len__(self):
        return len(self.staged)

    def stage(self, bag: BoSC, freq: int = 1):
        if len(bag) != self.vector_len:
            raise VectorLenMismatch(
                f"bag of length {len(bag)} does not fit delta of length {self.vector_len}")
        bag = tuple(bag)
        self.staged[bag] = self.staged.get(bag, 0) + freq

    def clear(self):
        self.staged.clear()


def train_insert(db: NormalBehaviorDb, bag: BoSC) -> NormalBehaviorDb:
    return db.insert(bag)


def contains(db: NormalBehaviorDb, bag: BoSC) -> bool:
    return db.contains(bag)


def commit_delta(db: NormalBehaviorDb, delta: EpochDelta) -> NormalBehaviorDb:
    return db.commit(delta)


def from_bags(bags: Iterable[BoSC], k: int, vector_len: int) -> NormalBehaviorDb:
    db = NormalBehaviorDb(k, vector_len)
    for bag in bags:
        db.insert(bag)
    return db
