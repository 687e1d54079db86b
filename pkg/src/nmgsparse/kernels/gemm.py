"""Matrix multiplication kernels: C = A @ B with A dense, CSR or n:m:g.

All three kernels share the same structure: B is packed into panels ``nr``
columns wide, the accumulator tile of ``nr`` columns per output row lives in
a small local buffer, and work is split across threads by disjoint output row
ranges. Each element's accumulation order does not depend on the row split,
so results are bit-identical for every thread count.

The inner loops are compiled with numba. The register-tile width and the
number of values per pattern are compile-time constants, so each
``(nr, n)`` combination gets its own specialization.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit

from ..core import CsrMatrix, ShapeError, StructureError, as_dense
from ..nmg import GroupedNMMatrix

log = logging.getLogger(__name__)

VECTOR_GRANULE = 8
MR = 4
# FMA contraction only; no reassociation, so summation order is fixed
_FASTMATH = {"contract"}


@dataclass(frozen=True)
class GemmTiling:
    """Cache and register blocking parameters.

    ``mc``/``kc``/``nc`` block A rows, the contraction axis and B columns for
    the dense kernel; ``nr`` is the accumulator width shared by all kernels.
    """

    mc: int = 96
    kc: int = 256
    nc: int = 1024
    nr: int = 128
    threads: int = 1

    def __post_init__(self):
        for name in ("mc", "kc", "nc", "nr", "threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.nr % VECTOR_GRANULE:
            raise ValueError(f"nr must be a multiple of {VECTOR_GRANULE}")


DEFAULT_TILING = GemmTiling()


def _result_dtype(*dtypes):
    dt = np.result_type(*dtypes)
    return np.dtype(np.float64) if dt == np.float64 else np.dtype(np.float32)


def _split(total: int, parts: int, align: int = 1) -> list:
    """Split range(total) into at most ``parts`` contiguous aligned pieces."""
    units = -(-total // align)
    parts = max(1, min(parts, units))
    bounds = [min(total, (units * i // parts) * align) for i in range(parts + 1)]
    return [(bounds[i], bounds[i + 1]) for i in range(parts) if bounds[i] < bounds[i + 1]]


def _run(fn, ranges, threads: int) -> list:
    if threads == 1 or len(ranges) == 1:
        return [fn(*r) for r in ranges]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return [f.result() for f in [pool.submit(fn, *r) for r in ranges]]


# ---------------------------------------------------------------------------
# dense


@lru_cache(maxsize=None)
def _dense_kernel(nr: int, instrument: bool):
    NR = nr
    INSTR = instrument

    @njit(boundscheck=False, fastmath=_FASTMATH, nogil=True)
    def kernel(A, B, C, r0, r1, mc, kc, nc, counters):
        K = A.shape[1]
        N = B.shape[1]
        bp = np.zeros(((nc + NR - 1) // NR, kc, NR), C.dtype)
        ap = np.zeros(((mc + MR - 1) // MR, kc, MR), C.dtype)
        acc = np.zeros((MR, NR), C.dtype)
        for j0 in range(0, N, nc):
            j1 = min(j0 + nc, N)
            nt = (j1 - j0 + NR - 1) // NR
            for k0 in range(0, K, kc):
                kk = min(k0 + kc, K) - k0
                for t in range(nt):
                    for k in range(kk):
                        for c in range(NR):
                            jc = j0 + t * NR + c
                            bp[t, k, c] = B[k0 + k, jc] if jc < j1 else 0.0
                for i0 in range(r0, r1, mc):
                    i1 = min(i0 + mc, r1)
                    ns = (i1 - i0 + MR - 1) // MR
                    for s in range(ns):
                        for k in range(kk):
                            for r in range(MR):
                                ir = i0 + s * MR + r
                                ap[s, k, r] = A[ir, k0 + k] if ir < i1 else 0.0
                    for t in range(nt):
                        jj = j0 + t * NR
                        w = min(NR, j1 - jj)
                        for s in range(ns):
                            ii = i0 + s * MR
                            h = min(MR, i1 - ii)
                            acc[:, :] = 0.0
                            for k in range(kk):
                                for r in range(MR):
                                    a = ap[s, k, r]
                                    for c in range(NR):
                                        acc[r, c] += a * bp[t, k, c]
                            for r in range(h):
                                for c in range(w):
                                    C[ii + r, jj + c] += acc[r, c]
                            if INSTR:
                                counters[0] += h * w * kk

    return kernel


def _prepare(a, b):
    b = as_dense(b)
    dt = _result_dtype(a.dtype, b.dtype)
    return np.ascontiguousarray(b, dtype=dt), dt


def _dense_impl(a, b, tiling, instrument):
    tiling = tiling or DEFAULT_TILING
    a = as_dense(a)
    b, dt = _prepare(a, b)
    a = np.ascontiguousarray(a, dtype=dt)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    c = np.zeros((a.shape[0], b.shape[1]), dtype=dt)
    kernel = _dense_kernel(tiling.nr, instrument)
    ranges = _split(a.shape[0], tiling.threads, MR)
    t = tiling

    def run(r0, r1):
        local = np.zeros(2, dtype=np.int64)
        kernel(a, b, c, r0, r1, t.mc, t.kc, t.nc, local)
        return local

    counters = sum(_run(run, ranges, tiling.threads))
    return c, counters


def dense_gemm(a, b, tiling: GemmTiling | None = None) -> np.ndarray:
    """Blocked dense GEMM with a fixed summation order."""
    return _dense_impl(a, b, tiling, False)[0]


def dense_gemm_counted(a, b, tiling: GemmTiling | None = None):
    c, counters = _dense_impl(a, b, tiling, True)
    return c, {"multiplies": int(counters[0])}


# ---------------------------------------------------------------------------
# CSR


@lru_cache(maxsize=None)
def _csr_kernel(nr: int):
    NR = nr

    @njit(boundscheck=False, fastmath=_FASTMATH, nogil=True)
    def kernel(row_ptr, col_idx, vals, B, C, r0, r1):
        N = B.shape[1]
        acc = np.zeros(NR, C.dtype)
        for jj in range(0, N, NR):
            w = min(NR, N - jj)
            for i in range(r0, r1):
                acc[:] = 0.0
                for e in range(row_ptr[i], row_ptr[i + 1]):
                    v = vals[e]
                    row = col_idx[e]
                    for c in range(w):
                        acc[c] += v * B[row, jj + c]
                for c in range(w):
                    C[i, jj + c] = acc[c]

    return kernel


def csr_spmm(a: CsrMatrix, b, tiling: GemmTiling | None = None) -> np.ndarray:
    """CSR times dense, row by row."""
    tiling = tiling or DEFAULT_TILING
    if not isinstance(a, CsrMatrix):
        raise StructureError("csr_spmm expects a CsrMatrix")
    b, dt = _prepare(a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    c = np.zeros((a.shape[0], b.shape[1]), dtype=dt)
    vals = np.ascontiguousarray(a.values, dtype=dt)
    kernel = _csr_kernel(tiling.nr)
    _run(lambda r0, r1: kernel(a.row_ptr, a.col_idx, vals, b, c, r0, r1),
         _split(a.shape[0], tiling.threads), tiling.threads)
    return c


# ---------------------------------------------------------------------------
# n:m:g


@lru_cache(maxsize=None)
def _nmg_kernel(n: int, nr: int, instrument: bool):
    NR = nr
    NV = n
    INSTR = instrument

    @njit(boundscheck=False, fastmath=_FASTMATH, nogil=True)
    def kernel(vals, idx, pats, slots, m, B, C, gc0, gc1, counters):
        nsb = vals.shape[1]
        P = vals.shape[2]
        g = vals.shape[3]
        W = P * g
        K = B.shape[0]
        N = B.shape[1]
        panel = np.empty((K, NR), C.dtype)
        acc = np.empty((W, NR), C.dtype)
        breg = np.empty((NV, NR), C.dtype)
        for jj in range(0, N, NR):
            w = min(NR, N - jj)
            # pack one B panel, zero-filled past the last column
            for k in range(K):
                for c in range(w):
                    panel[k, c] = B[k, jj + c]
                for c in range(w, NR):
                    panel[k, c] = 0.0
            for gc in range(gc0, gc1):
                acc[:, :] = 0.0
                for sb in range(nsb):
                    kb = sb * m
                    # first pattern of a block: load all n B rows
                    for j in range(NV):
                        row = kb + pats[0, j]
                        for c in range(NR):
                            breg[j, c] = panel[row, c]
                    if INSTR:
                        counters[1] += NV
                    for p in range(P):
                        if p > 0:
                            # neighbouring patterns differ in one position:
                            # replace exactly one loaded row
                            s = slots[p, NV]
                            row = kb + pats[p, slots[p, NV + 1]]
                            for c in range(NR):
                                breg[s, c] = panel[row, c]
                            if INSTR:
                                counters[1] += 1
                        for q in range(g):
                            r = idx[gc, sb, p, q]
                            for j in range(NV):
                                v = vals[gc, sb, p, q, j]
                                sj = slots[p, j]
                                for c in range(NR):
                                    acc[r, c] += v * breg[sj, c]
                            if INSTR:
                                counters[0] += NV * w
                # scatter the chunk's rows back to their original positions
                for r in range(W):
                    for c in range(w):
                        C[gc * W + r, jj + c] = acc[r, c]

    return kernel


def _nmg_impl(a: GroupedNMMatrix, b, tiling, instrument):
    tiling = tiling or DEFAULT_TILING
    if not isinstance(a, GroupedNMMatrix):
        raise StructureError("nmg_spmm expects a GroupedNMMatrix")
    if a.sparse_dim != 1:
        raise ShapeError("nmg_spmm needs the sparse axis on A's contraction (column) axis")
    b, dt = _prepare(a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    table = a.table
    vals = np.ascontiguousarray(a.values, dtype=dt)
    idx = np.ascontiguousarray(a.col_index, dtype=np.int64)
    c = np.zeros((a.shape[0], b.shape[1]), dtype=dt)
    kernel = _nmg_kernel(a.n, tiling.nr, instrument)
    ngc = a.chunk_grid[0]

    def run(g0, g1):
        local = np.zeros(2, dtype=np.int64)
        kernel(vals, idx, table.patterns, table.slots, a.m, b, c, g0, g1, local)
        return local

    counters = sum(_run(run, _split(ngc, tiling.threads), tiling.threads))
    return c, counters


def nmg_spmm(a: GroupedNMMatrix, b, tiling: GemmTiling | None = None) -> np.ndarray:
    """n:m:g sparse times dense.

    Within each chunk, patterns are visited in table order; for each the
    ``n`` B rows it selects sit in a small register buffer, every packed
    value is broadcast against them and accumulated into the row given by the
    chunk's column index.
    """
    return _nmg_impl(a, b, tiling, False)[0]


def nmg_spmm_counted(a: GroupedNMMatrix, b, tiling: GemmTiling | None = None):
    """Like :func:`nmg_spmm` but also returns multiply and B-row load counts."""
    c, counters = _nmg_impl(a, b, tiling, True)
    return c, {"multiplies": int(counters[0]), "b_row_loads": int(counters[1])}


# ---------------------------------------------------------------------------
# tolerance check shared by tests, verification and benchmarks


def oracle_error(a_dense, b, c) -> float:
    """Largest per-entry error of ``c`` relative to the double-precision product.

    Each entry's error is scaled by sum_k |a_ik| |b_kj|, the natural bound for
    rounding error in that dot product.
    """
    a64 = np.asarray(a_dense, dtype=np.float64)
    b64 = np.asarray(b, dtype=np.float64)
    ref = a64 @ b64
    scale = np.abs(a64) @ np.abs(b64)
    err = np.abs(np.asarray(c, dtype=np.float64) - ref)
    tiny = np.finfo(np.float64).tiny
    bad = err > 0
    if not bad.any():
        return 0.0
    return float(np.max(err[bad] / np.maximum(scale[bad], tiny)))


def tolerance_for(dtype) -> float:
    return 1e-10 if np.dtype(dtype) == np.float64 else 1e-4
