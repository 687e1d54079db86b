"""Timing harness for the GEMM kernels."""
from __future__ import annotations

import statistics
import time
from dataclasses import astuple, dataclass, fields

import numpy as np

from ..core import CsrMatrix, ContractError
from ..nmg import from_dense_greedy, pad_to_format
from ..sparsifiers import ScalarFraction, apply
from .gemm import DEFAULT_TILING, GemmTiling, csr_spmm, dense_gemm, nmg_spmm, oracle_error, tolerance_for

FORMATS = ("dense", "csr", "nmg", "blas")


@dataclass(frozen=True)
class BenchReport:
    shape: str
    format: str
    n: int
    m: int
    g: int
    sparsity: float
    reps: int
    median_s: float
    min_s: float
    gflops: float

    @staticmethod
    def csv_header() -> str:
        return ",".join(f.name for f in fields(BenchReport))

    def csv_row(self) -> str:
        vals = []
        for v in astuple(self):
            vals.append(f"{v:.6g}" if isinstance(v, float) else str(v))
        return ",".join(vals)


class OracleMismatch(AssertionError):
    """A kernel result violated its tolerance against the dense oracle."""


@dataclass
class Prepared:
    """A ready-to-time operand pair: ``run()`` computes the (cropped) product."""

    run: object
    a_dense: np.ndarray
    b: np.ndarray
    sparsity: float


def prepare(shape, fmt: str, n: int = 0, m: int = 0, g: int = 0, sparsity: float = 0.0,
            tiling: GemmTiling | None = None, seed: int = 0, dtype=np.float32) -> Prepared:
    """Build random operands for one benchmark configuration.

    n:m:g operands are zero-padded when the shape does not divide the
    format, and the product is cropped back to (M, N).
    """
    tiling = tiling or DEFAULT_TILING
    M, K, N = shape
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((M, K)).astype(dtype)
    b = rng.standard_normal((K, N)).astype(dtype)
    if fmt == "dense":
        return Prepared(lambda: dense_gemm(a, b, tiling), a, b, 0.0)
    if fmt == "blas":
        return Prepared(lambda: a @ b, a, b, 0.0)
    if fmt == "csr":
        masked = apply(ScalarFraction(sparsity), a)
        csr = CsrMatrix.from_mask(masked.dense, masked.mask)
        return Prepared(lambda: csr_spmm(csr, b, tiling), masked.dense, b,
                        1.0 - csr.nnz / a.size)
    if fmt == "nmg":
        padded = pad_to_format(a, n, m, g, sparse_dim=1)
        enc = from_dense_greedy(padded, n, m, g, sparse_dim=1, group_dim=0)
        bp = b
        if padded.shape[1] != K:
            bp = np.zeros((padded.shape[1], N), dtype=dtype)
            bp[:K] = b
        a_dense = enc.to_dense()[:M, :K]
        if padded.shape == a.shape:
            run = lambda: nmg_spmm(enc, bp, tiling)
        else:
            run = lambda: nmg_spmm(enc, bp, tiling)[:M]
        return Prepared(run, a_dense, b, 1.0 - n / m)
    raise ContractError(f"unknown benchmark format {fmt!r}; expected one of {FORMATS}")


def check_against_oracle(p: Prepared, tol: float | None = None) -> float:
    c = p.run()
    tol = tolerance_for(c.dtype) if tol is None else tol
    err = oracle_error(p.a_dense, p.b, c)
    if not err <= tol:
        raise OracleMismatch(f"relative error {err:.3g} exceeds tolerance {tol:g}")
    return err


def time_reps(fn, reps: int) -> list:
    """Wall-clock seconds of ``reps`` calls after one discarded warm-up."""
    fn()
    out = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return out


def bench_gemm(shape, fmt: str = "dense", n: int = 0, m: int = 0, g: int = 0,
               sparsity: float = 0.0, reps: int = 5, tiling: GemmTiling | None = None,
               seed: int = 0, verify: bool = False, prepared: Prepared | None = None) -> BenchReport:
    """Median and minimum runtime of one GEMM configuration.

    GFLOP/s always counts the dense-equivalent 2*M*K*N flops so formats are
    directly comparable.
    """
    if reps < 3:
        raise ContractError("reps must be at least 3")
    p = prepared or prepare(shape, fmt, n, m, g, sparsity, tiling, seed)
    if verify:
        check_against_oracle(p)
    times = time_reps(p.run, reps)
    med = statistics.median(times)
    M, K, N = shape
    return BenchReport(
        shape=f"{M}x{K}x{N}", format=fmt, n=n, m=m, g=g, sparsity=round(p.sparsity, 6),
        reps=reps, median_s=med, min_s=min(times), gflops=2.0 * M * K * N / med / 1e9,
    )
