"""Incremental bag-of-system-calls over a fixed-size sliding window."""

from collections import deque
from typing import Optional, Sequence, Tuple

from boscwatch.errors import IndexOutOfRange, LengthMismatch

DEFAULT_K = 10

BoSC = Tuple[int, ...]


class SlidingWindow:
    """Last ``k`` syscall indices plus their running count vector.

    :meth:`push` emits the bag as an immutable tuple once ``k`` indices are
    held; nothing is emitted during warm-up.
    """

    __slots__ = ("k", "vector_len", "ring", "counts")

    def __init__(self, k: int = DEFAULT_K, vector_len: int = 1):
        if k < 1:
            raise ValueError(f"window size must be >= 1, got {k}")
        if vector_len < 1:
            raise ValueError(f"vector length must be >= 1, got {vector_len}")
        self.k = k
        self.vector_len = vector_len
        self.ring = deque()
        self.counts = [0] * vector_len

    def __len__(self):
        return len(self.ring)

    @property
    def warm(self) -> bool:
        return len(self.ring) == self.k

    def push(self, idx: int) -> Optional[BoSC]:
        if not 0 <= idx < self.vector_len:
            raise IndexOutOfRange(f"index {idx} outside [0, {self.vector_len})")
        ring = self.ring
        counts = self.counts
        ring.append(idx)
        counts[idx] += 1
        if len(ring) > self.k:
            counts[ring.popleft()] -= 1
        elif len(ring) < self.k:
            return None
        return tuple(counts)

    def reset(self):
        self.ring.clear()
        self.counts = [0] * self.vector_len


def bosc_of(indices: Sequence[int], k: int, vector_len: int) -> BoSC:
    """Recount a full window from scratch."""
    if len(indices) != k:
        raise LengthMismatch(f"expected {k} indices, got {len(indices)}")
    counts = [0] * vector_len
    for idx in indices:
        if not 0 <= idx < vector_len:
            raise IndexOutOfRange(f"index {idx} outside [0, {vector_len})")
        counts[idx] += 1
    return tuple(counts)
