"""Self-check suites run by ``nmgsparse verify``.

Each suite compares an implementation with an independent oracle on seeded
random inputs. Kernels are looked up through the ``kernels`` package at call
time so that a patched (or broken) kernel is what gets checked.
"""
from __future__ import annotations

import time
import traceback
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import COO, CSR, DENSE, MASKED, CooMatrix, CsrMatrix, MaskedMatrix, energy, to_dense
from .dispatch import (
    LOSSLESS,
    DispatchError,
    OutputFormat,
    convert_lossless,
    expected_fallbacks,
    make_registry,
)
from .io import encoded_from_bytes, encoded_to_bytes, dense_from_bytes, dense_to_bytes
from .nmg import (
    columnwise_magnitudes,
    from_dense_greedy,
    greedy_assignment,
    oracle_optimal,
    pattern_order,
    refine_exchange,
)
from .nmg.convert import assignment_magnitude
from .sparsifiers import ScalarFraction, ScalarThreshold, apply
from .train import MLP, finite_difference_errors, prune_layers, teacher_task


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    cases: int
    detail: str
    seconds: float


def _greedy_vs_oracle(rng):
    configs = [(1, 2, 1), (1, 2, 2), (1, 3, 2), (1, 4, 2), (2, 4, 1), (1, 2, 4)]
    ratios = []
    for trial in range(120):
        n, m, g = configs[trial % len(configs)]
        table = pattern_order(n, m)
        chunk = rng.standard_normal((m, table.count * g))
        greedy = greedy_assignment(chunk, table, g)
        best = oracle_optimal(chunk, n, m, g)
        e_g = assignment_magnitude(chunk, greedy, table)
        e_o = assignment_magnitude(chunk, best, table)
        e_x = assignment_magnitude(chunk, refine_exchange(chunk, greedy, table), table)
        if e_g > e_o + 1e-12 or e_x < e_g - 1e-12 or e_x > e_o + 1e-12:
            return False, trial + 1, f"bound violated for {n}:{m}:{g}"
        ratios.append(e_g / e_o)
    return True, 120, f"mean greedy/optimal = {np.mean(ratios):.4f}"


def _conversion_lossless(rng):
    cases = 0
    for n, m, g in [(1, 2, 1), (2, 4, 2), (3, 6, 1), (1, 8, 2)]:
        width = pattern_order(n, m).count * g
        x = rng.standard_normal((m * 2, width * 2))
        enc = from_dense_greedy(x, n, m, g, sparse_dim=0, group_dim=1)
        dec = enc.to_dense()
        keep = enc.support()
        if not np.array_equal(dec[keep], x[keep]) or np.any(dec[~keep]):
            return False, cases, f"{n}:{m}:{g} decode does not copy kept values"
        again = from_dense_greedy(dec, n, m, g, sparse_dim=0, group_dim=1)
        if not np.array_equal(again.to_dense(), dec):
            return False, cases, f"{n}:{m}:{g} conforming input not reproduced"
        if not encoded_from_bytes(encoded_to_bytes(enc)).same_encoding(enc):
            return False, cases, "STNG roundtrip changed the encoding"
        cases += 1
    x = rng.standard_normal((6, 5))
    x[rng.random(x.shape) < 0.5] = 0
    sources = {
        "dense": x,
        "masked": MaskedMatrix.from_dense(x, x != 0),
        "csr": CsrMatrix.from_dense(x),
        "coo": CooMatrix.from_dense(x),
    }
    tags = {"dense": DENSE, "masked": MASKED, "csr": CSR, "coo": COO}
    for src, targets in LOSSLESS.items():
        if src not in sources:
            continue
        for t in targets:
            out = convert_lossless(sources[src], tags[t])
            if not np.array_equal(to_dense(out), x):
                return False, cases, f"{src} -> {t} changed the matrix"
            cases += 1
    if not np.array_equal(dense_from_bytes(dense_to_bytes(x)), x):
        return False, cases, "STNM roundtrip changed the matrix"
    return True, cases + 1, "all conversion edges exact"


def _kernel_vs_dense(rng):
    worst = 0.0
    cases = 0
    for trial in range(24):
        dtype = np.float32 if trial % 2 == 0 else np.float64
        tol = kernels.tolerance_for(dtype)
        n, m, g = [(1, 2, 2), (2, 4, 1), (1, 4, 2), (3, 6, 1), (1, 8, 1)][trial % 5]
        width = pattern_order(n, m).count * g
        M = width * int(rng.integers(1, 4))
        K = m * int(rng.integers(1, 9))
        N = int(rng.integers(1, 70))
        a = rng.standard_normal((M, K)).astype(dtype)
        b = rng.standard_normal((K, N)).astype(dtype)
        enc = from_dense_greedy(a, n, m, g)
        c = kernels.nmg_spmm(enc, b)
        err = kernels.oracle_error(enc.to_dense(), b, c)
        worst = max(worst, err)
        if not err <= tol:
            return False, cases, f"nmg_spmm {n}:{m}:{g} {M}x{K}x{N} error {err:.3g} > {tol:g}"
        cases += 1
        csr = CsrMatrix.from_dense(apply(ScalarFraction(0.9), a).dense)
        c = kernels.csr_spmm(csr, b)
        err = kernels.oracle_error(csr.to_dense(), b, c)
        worst = max(worst, err)
        if not err <= tol:
            return False, cases, f"csr_spmm {M}x{K}x{N} error {err:.3g} > {tol:g}"
        c = kernels.dense_gemm(a, b)
        err = kernels.oracle_error(a, b, c)
        if not err <= tol:
            return False, cases, f"dense_gemm {M}x{K}x{N} error {err:.3g} > {tol:g}"
        cases += 2
    return True, cases, f"worst scaled error {worst:.3g}"


def _gradient_fd(rng):
    data = teacher_task(32, sizes=(64, 8, 1), seed=int(rng.integers(1 << 31)))
    worst = 0.0
    cases = 0
    for pruned in (False, True):
        model = MLP((64, 32, 1), seed=int(rng.integers(1 << 31)))
        if pruned:
            prune_layers(model, model.layer_names, 0.5)
        errs = finite_difference_errors(model, data.x, data.y)
        cases += len(errs)
        worst = max(worst, max(errs.values()))
    return worst <= 1e-4, cases, f"worst relative error {worst:.3g}"


def _dispatch_paths(rng):
    reg = make_registry()
    x = rng.standard_normal((12, 24))
    x[rng.random(x.shape) < 0.4] = 0
    y = rng.standard_normal((12, 24))
    b = rng.standard_normal((24, 7))
    w = from_dense_greedy(rng.standard_normal((12, 24)), 1, 4, 3)
    cases = 0
    checks = [
        ("add", [CsrMatrix.from_dense(x), CsrMatrix.from_dense(y)], x + y),
        ("add", [x, CooMatrix.from_dense(y)], x + y),
        ("matmul", [w, b], w.to_dense() @ b),
        ("matmul", [CsrMatrix.from_dense(x), b], x @ b),
        ("matmul", [CooMatrix.from_dense(x), b], x @ b),
        ("matmul", [MaskedMatrix.from_dense(x, x != 0), b], x @ b),
        ("relu", [w], np.maximum(w.to_dense(), 0)),
        ("relu", [CsrMatrix.from_dense(x)], np.maximum(x, 0)),
        ("linear", [b.T, w], b.T @ w.to_dense().T),
    ]
    for op, args, want in checks:
        with expected_fallbacks():
            got = to_dense(reg.execute(op, args).output)
        if not np.allclose(got, want, rtol=1e-10, atol=1e-10):
            return False, cases, f"{op} on {[type(a).__name__ for a in args]} differs from oracle"
        cases += 1
    fmt = OutputFormat(ScalarThreshold(0.5), CSR, ScalarFraction(0.5), COO)
    got = reg.execute("add", [x, y], [fmt]).output
    want = apply(ScalarFraction(0.5), apply(ScalarThreshold(0.5), x + y).dense).dense
    if not np.array_equal(to_dense(got), want):
        return False, cases, "output-format pipeline differs from the sparsifier oracle"
    try:
        convert_lossless(x, w.layout)
        return False, cases, "dense -> n:m:g conversion was not refused"
    except DispatchError:
        pass
    return True, cases + 2, "all paths match the dense oracle"


def _energy_metric(rng):
    x = rng.standard_normal((16, 32))
    for f in (0.0, 0.25, 0.5, 0.75):
        e = energy(apply(ScalarFraction(f), x).dense, x)
        top = np.sort(np.abs(x).ravel())[::-1][: int(np.ceil((1 - f) * x.size))].sum()
        if not np.isclose(e, top / np.abs(x).sum(), rtol=1e-12):
            return False, 0, f"energy at f={f} disagrees with the top-k oracle"
    e = columnwise_magnitudes(np.zeros((2, 2)), pattern_order(1, 2))
    return bool(not e.any()), 5, "energy equals top-k magnitude share"


SUITES = {
    "greedy_vs_oracle": _greedy_vs_oracle,
    "conversion_lossless": _conversion_lossless,
    "kernel_vs_dense": _kernel_vs_dense,
    "gradient_vs_fd": _gradient_fd,
    "dispatch_paths": _dispatch_paths,
    "energy_metric": _energy_metric,
}


def run_suites(names=None, seed: int = 0) -> list:
    out = []
    for name in names or SUITES:
        rng = np.random.default_rng(seed)
        t0 = time.perf_counter()
        try:
            ok, cases, detail = SUITES[name](rng)
        except Exception as exc:  # a crashing suite is a failing suite
            ok, cases, detail = False, 0, f"{type(exc).__name__}: {exc}"
            traceback.print_exc()
        out.append(SuiteResult(name, bool(ok), cases, detail, time.perf_counter() - t0))
    return out


def format_table(results) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'suite':<{width}}  result  cases  detail"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.cases:>5}  {r.detail}")
    return "\n".join(lines)
