"""Encode a matrix as n:m:g, multiply with it, and route ops through dispatch."""
import numpy as np

from nmgsparse.core import energy
from nmgsparse.dispatch import execute, expected_fallbacks
from nmgsparse.kernels import nmg_spmm, oracle_error
from nmgsparse.nmg import from_dense_greedy

rng = np.random.default_rng(0)
w = rng.standard_normal((96, 256)).astype(np.float32)
x = rng.standard_normal((256, 64)).astype(np.float32)

# 2:4 along the contraction axis, each pattern repeated in groups of 4 rows
enc = from_dense_greedy(w, 2, 4, 4)
better = from_dense_greedy(w, 2, 4, 4, refine=True)
print(f"values {enc.values.shape}, col_index {enc.col_index.shape} ({enc.col_index.dtype})")
print(f"energy kept: greedy {energy(enc.to_dense(), w):.4f}, "
      f"with exchange {energy(better.to_dense(), w):.4f}")

y = nmg_spmm(enc, x)
print(f"nmg_spmm scaled error vs float64 product: {oracle_error(enc.to_dense(), x, y):.2e}")

res = execute("matmul", [enc, x])
print(f"dispatch matmul(n:m:g, dense): {res.outcome}")
with expected_fallbacks():
    res = execute("relu", [enc])
print(f"dispatch relu(n:m:g): {res.outcome}; warning: {res.warnings[0].message}")
