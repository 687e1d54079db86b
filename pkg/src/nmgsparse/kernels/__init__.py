"""GEMM kernels and the benchmark harness."""
from .bench import BenchReport, bench_gemm
from .gemm import (
    DEFAULT_TILING,
    GemmTiling,
    csr_spmm,
    dense_gemm,
    dense_gemm_counted,
    nmg_spmm,
    nmg_spmm_counted,
    oracle_error,
    tolerance_for,
)

__all__ = [
    "DEFAULT_TILING", "BenchReport", "GemmTiling", "bench_gemm", "csr_spmm", "dense_gemm",
    "dense_gemm_counted", "nmg_spmm", "nmg_spmm_counted", "oracle_error", "tolerance_for",
]
