"""Revolving-door ordering of the n-subsets used as n:m nonzero patterns."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np

from ..core import ContractError

MAX_M = 16


def revolving_door(n: int, m: int) -> list:
    """All n-subsets of ``range(m)`` such that neighbours differ by one swap.

    Uses the classic recursion R(n, m) = R(n, m-1) followed by the reverse of
    R(n-1, m-1) with m-1 appended to every subset.
    """
    if n == 0:
        return [()]
    if n == m:
        return [tuple(range(m))]
    head = revolving_door(n, m - 1)
    tail = [c + (m - 1,) for c in reversed(revolving_door(n - 1, m - 1))]
    return head + tail


@dataclass(frozen=True, eq=False)
class PatternTable:
    """The C(m, n) patterns of a format, one row per pattern, indices ascending.

    ``slots`` describes the register bookkeeping used by the GEMM kernel: row
    ``p`` holds, for each of the ``n`` pattern entries, the register slot that
    carries it, followed by the slot overwritten when entering pattern ``p``
    and the pattern entry loaded into that slot.
    """

    n: int
    m: int
    patterns: np.ndarray
    slots: np.ndarray

    @property
    def count(self) -> int:
        return len(self.patterns)

    def __len__(self):
        return len(self.patterns)

    def as_sets(self) -> list:
        return [frozenset(p) for p in self.patterns.tolist()]

    def indicator(self) -> np.ndarray:
        """(count, m) 0/1 matrix with a one at every kept position."""
        out = np.zeros((self.count, self.m))
        out[np.repeat(np.arange(self.count), self.n), self.patterns.ravel()] = 1.0
        return out

    def __eq__(self, other):
        return (
            isinstance(other, PatternTable)
            and (self.n, self.m) == (other.n, other.m)
            and np.array_equal(self.patterns, other.patterns)
        )

    def __hash__(self):
        return hash((self.n, self.m))


def _register_slots(patterns: list, n: int) -> np.ndarray:
    slots = np.zeros((len(patterns), n + 2), dtype=np.int64)
    live = list(patterns[0])
    slots[0, :n] = np.arange(n)
    for p in range(1, len(patterns)):
        cur = patterns[p]
        (gone,) = set(live) - set(cur)
        (new,) = set(cur) - set(live)
        s = live.index(gone)
        live[s] = new
        slots[p, :n] = [live.index(e) for e in cur]
        slots[p, n] = s
        slots[p, n + 1] = cur.index(new)
    return slots


@lru_cache(maxsize=None)
def pattern_order(n: int, m: int) -> PatternTable:
    if not (1 <= n < m <= MAX_M):
        raise ContractError(f"need 1 <= n < m <= {MAX_M}, got n={n}, m={m}")
    patterns = revolving_door(n, m)
    assert len(patterns) == comb(m, n)
    arr = np.array(patterns, dtype=np.int64)
    arr.flags.writeable = False
    slots = _register_slots(patterns, n)
    slots.flags.writeable = False
    return PatternTable(n, m, arr, slots)
