"""Dense to n:m:g conversion.

Conversion works chunk by chunk. A chunk is an (m, C(m,n)*g) slice: ``m``
positions along the sparse axis by one chunk-width of columns along the group
axis. Each column receives one pattern and every pattern is used by exactly
``g`` columns, so choosing an encoding is an assignment problem per chunk.
Functions below accept any number of leading batch axes in front of the
(m, width) chunk axes.
"""
from __future__ import annotations

import logging
from math import factorial

import numpy as np
from numba import njit

from ..core import ContractError, ShapeError, as_dense
from .format import GroupedNMMatrix, check_axes, check_divisible, chunk_view
from .patterns import PatternTable, pattern_order

log = logging.getLogger(__name__)

ORACLE_MAX_WIDTH = 8


def columnwise_magnitudes(chunk, table: PatternTable) -> np.ndarray:
    """Preserved L1 magnitude of every (column, pattern) pair.

    Returns an array of shape (..., width, patterns); for one chunk that is
    C(m,n)^2 * g entries.
    """
    chunk = np.asarray(chunk)
    if chunk.ndim < 2 or chunk.shape[-2] != table.m:
        raise ShapeError(f"chunk must have {table.m} rows along the sparse axis, "
                         f"got shape {chunk.shape}")
    if chunk.shape[-1] % table.count:
        raise ShapeError(f"chunk width {chunk.shape[-1]} is not a multiple of "
                         f"C(m,n)={table.count}")
    a = np.abs(chunk.astype(np.float64, copy=False))
    pats = table.patterns
    mags = a[..., pats[:, 0], :]
    for j in range(1, table.n):
        mags = mags + a[..., pats[:, j], :]
    return np.swapaxes(mags, -1, -2)


def assignment_magnitude(chunk, assignment, table: PatternTable) -> np.ndarray:
    mags = columnwise_magnitudes(chunk, table)
    picked = np.take_along_axis(mags, np.asarray(assignment)[..., None], axis=-1)
    return picked[..., 0].sum(axis=-1)


def check_assignment(assignment, count: int, g: int):
    a = np.asarray(assignment)
    if a.shape[-1] != count * g:
        raise ContractError(f"assignment width {a.shape[-1]} != {count * g}")
    if a.size and (a.min() < 0 or a.max() >= count):
        raise ContractError("pattern id out of range")
    flat = a.reshape(-1, a.shape[-1])
    hist = (flat[:, :, None] == np.arange(count)).sum(axis=1)
    if np.any(hist != g):
        raise ContractError(f"every pattern must be used exactly g={g} times per chunk")


@njit(cache=True, nogil=True)
def _greedy(order, count, g, width):
    nch = order.shape[0]
    out = np.full((nch, width), -1, np.int64)
    fill = np.zeros(count, np.int64)
    for c in range(nch):
        fill[:] = 0
        left = width
        for t in range(order.shape[1]):
            e = order[c, t]
            col = e // count
            p = e % count
            if out[c, col] < 0 and fill[p] < g:
                out[c, col] = p
                fill[p] += 1
                left -= 1
                if left == 0:
                    break
    return out


def greedy_assignment(chunk, table: PatternTable, g: int) -> np.ndarray:
    """Greedy pattern choice per chunk.

    (column, pattern) pairs are taken in order of decreasing magnitude, ties
    by ascending column then ascending pattern id; a pair is accepted when the
    column is still free and the pattern has fewer than ``g`` columns.
    """
    mags = columnwise_magnitudes(chunk, table)
    width = mags.shape[-2]
    if width != table.count * g:
        raise ShapeError(f"chunk width {width} != C(m,n)*g = {table.count * g}")
    lead = mags.shape[:-2]
    flat = mags.reshape(-1, width * table.count)
    # flat index = column * count + pattern, so a stable sort breaks ties
    # by column and then by pattern
    order = np.argsort(-flat, axis=1, kind="stable")
    out = _greedy(order, table.count, g, width)
    # by counting, a free column always meets a non-full pattern before the
    # list runs out
    assert (out >= 0).all(), "greedy left a column unassigned"
    return out.reshape(lead + (width,))


@njit(cache=True, nogil=True)
def _exchange(mags, assign):
    nch, width, _ = mags.shape
    swaps = 0
    for c in range(nch):
        changed = True
        while changed:
            changed = False
            for i in range(width):
                for j in range(i + 1, width):
                    pi = assign[c, i]
                    pj = assign[c, j]
                    if pi == pj:
                        continue
                    if mags[c, i, pj] + mags[c, j, pi] > mags[c, i, pi] + mags[c, j, pj]:
                        assign[c, i] = pj
                        assign[c, j] = pi
                        swaps += 1
                        changed = True
    return swaps


def refine_exchange(chunk, assignment, table: PatternTable) -> np.ndarray:
    """Pairwise pattern exchange until no swap improves the pair's magnitude.

    Columns are visited in ascending pairs (i < j); a swap is made only when
    it strictly increases the preserved magnitude of the two columns, so the
    total never decreases and the loop terminates.
    """
    mags = columnwise_magnitudes(chunk, table)
    a = np.asarray(assignment, dtype=np.int64)
    g = a.shape[-1] // table.count
    check_assignment(a, table.count, g)
    lead = a.shape[:-1]
    work = np.ascontiguousarray(a.reshape(-1, a.shape[-1])).copy()
    swaps = _exchange(np.ascontiguousarray(mags.reshape(work.shape + (table.count,))), work)
    log.debug("exchange refinement made %d swaps", swaps)
    return work.reshape(lead + (a.shape[-1],))


def _multiset_orders(count: int, g: int, width: int):
    left = [g] * count
    cur = [0] * width

    def rec(pos):
        if pos == width:
            yield tuple(cur)
            return
        for p in range(count):
            if left[p]:
                left[p] -= 1
                cur[pos] = p
                yield from rec(pos + 1)
                left[p] += 1

    yield from rec(0)


def oracle_optimal(chunk, n: int, m: int, g: int) -> np.ndarray:
    """Exhaustive search over all (C*g)! / (g!)^C assignments of one chunk."""
    table = pattern_order(n, m)
    width = table.count * g
    if width > ORACLE_MAX_WIDTH:
        raise ContractError(f"C(m,n)*g = {width} exceeds the enumeration bound {ORACLE_MAX_WIDTH}")
    chunk = np.asarray(chunk, dtype=np.float64)
    if chunk.shape != (m, width):
        raise ShapeError(f"chunk must have shape {(m, width)}, got {chunk.shape}")
    mags = columnwise_magnitudes(chunk, table)
    orders = np.array(list(_multiset_orders(table.count, g, width)), dtype=np.int64)
    assert len(orders) == factorial(width) // factorial(g) ** table.count
    totals = mags[np.arange(width), orders].sum(axis=1)
    return orders[int(np.argmax(totals))]


def encode(x, n: int, m: int, g: int, assignment, sparse_dim: int = 1,
           group_dim: int = 0) -> GroupedNMMatrix:
    """Build the encoding for a given per-chunk assignment.

    ``assignment`` has shape (group chunks, sparse blocks, width).
    """
    x = as_dense(x)
    check_axes(sparse_dim, group_dim)
    check_divisible(x.shape, n, m, g, sparse_dim)
    table = pattern_order(n, m)
    width = table.count * g
    chunks = chunk_view(x, m, width, sparse_dim)
    ngc, nsb = chunks.shape[:2]
    assignment = np.asarray(assignment, dtype=np.int64)
    if assignment.shape != (ngc, nsb, width):
        raise ShapeError(f"assignment shape {assignment.shape} != {(ngc, nsb, width)}")
    check_assignment(assignment, table.count, g)
    # stable: columns sharing a pattern stay in ascending order
    order = np.argsort(assignment, axis=-1, kind="stable")
    grouped = np.take_along_axis(chunks, order[:, :, None, :], axis=-1)
    grouped = grouped.reshape(ngc, nsb, m, table.count, g)
    pid = np.arange(table.count)[:, None]
    # -> (ngc, nsb, patterns, n, g)
    vals = grouped[:, :, table.patterns, pid, :]
    values = np.ascontiguousarray(vals.transpose(0, 1, 2, 4, 3))
    col_index = order.reshape(ngc, nsb, table.count, g).astype(np.uint16)
    return GroupedNMMatrix(n, m, g, x.shape, sparse_dim, group_dim, values, col_index)


def greedy_matrix_assignment(x, n, m, g, sparse_dim=1, refine=False) -> np.ndarray:
    table = pattern_order(n, m)
    chunks = chunk_view(x, m, table.count * g, sparse_dim)
    a = greedy_assignment(chunks, table, g)
    if refine:
        a = refine_exchange(chunks, a, table)
    return a


def from_dense_greedy(x, n: int, m: int, g: int, sparse_dim: int = 1,
                      group_dim: int = 0, refine: bool = False) -> GroupedNMMatrix:
    """Encode ``x`` in n:m:g, choosing patterns greedily per chunk.

    With ``refine=True`` the greedy result is improved by pairwise exchange.
    Kept values are copied unmodified.
    """
    x = as_dense(x)
    check_axes(sparse_dim, group_dim)
    check_divisible(x.shape, n, m, g, sparse_dim)
    a = greedy_matrix_assignment(x, n, m, g, sparse_dim, refine)
    return encode(x, n, m, g, a, sparse_dim, group_dim)


def refine_encoding(x, enc: GroupedNMMatrix) -> GroupedNMMatrix:
    """Re-encode ``x`` starting from ``enc``'s assignment and exchanging patterns."""
    x = as_dense(x)
    chunks = chunk_view(x, enc.m, enc.chunk_width, enc.sparse_dim)
    a = refine_exchange(chunks, enc.assignment(), enc.table)
    return encode(x, enc.n, enc.m, enc.g, a, enc.sparse_dim, enc.group_dim)


def best_nm_energy_mask(x, n: int, m: int, sparse_dim: int = 1) -> np.ndarray:
    """Mask of the per-block optimal (ungrouped) n:m pruning, for comparison."""
    x = as_dense(x)
    t = x if sparse_dim == 0 else x.T
    s_len, g_len = t.shape
    if s_len % m:
        raise ShapeError(f"sparse axis length {s_len} is not divisible by m={m}")
    blocks = np.abs(t).reshape(s_len // m, m, g_len)
    order = np.argsort(-blocks, axis=1, kind="stable")
    keep = np.zeros_like(blocks, dtype=bool)
    np.put_along_axis(keep, order[:, :n, :], True, axis=1)
    keep = keep.reshape(s_len, g_len)
    return keep if sparse_dim == 0 else keep.T
