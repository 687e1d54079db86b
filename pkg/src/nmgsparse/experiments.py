"""Energy comparison of sparsity structures at matched sparsity."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import energy
from .nmg import from_dense_greedy, pad_to_format
from .nmg.convert import best_nm_energy_mask
from .sparsifiers import BlockwiseFraction, ScalarFraction, mask_of

STRUCTURES = ("unstructured", "nm", "nmg", "blocked")


def structure_energy(x: np.ndarray, structure: str, n: int, m: int, g: int = 1,
                     block: int = 4) -> float:
    """Energy kept when ``x`` is pruned to sparsity 1 - n/m with the given structure.

    The sparse axis is axis 1 (the contraction axis of ``x`` as a left GEMM
    operand); n:m:g groups run along axis 0. Shapes that do not divide the
    n:m:g chunk are zero-padded for conversion and cropped afterwards.
    """
    f = 1.0 - n / m
    total = np.abs(x).sum()
    if structure == "unstructured":
        keep = mask_of(ScalarFraction(f), x)
    elif structure == "nm":
        keep = best_nm_energy_mask(x, n, m, sparse_dim=1)
    elif structure == "blocked":
        keep = mask_of(BlockwiseFraction(f, block, block), x)
    elif structure == "nmg":
        padded = pad_to_format(x, n, m, g, sparse_dim=1)
        enc = from_dense_greedy(padded, n, m, g, sparse_dim=1, group_dim=0)
        pruned = enc.to_dense()[: x.shape[0], : x.shape[1]]
        return energy(pruned, x)
    else:
        raise ValueError(f"unknown structure {structure!r}; expected one of {STRUCTURES}")
    return float(np.abs(x[keep]).sum() / total)


@dataclass(frozen=True)
class SweepRow:
    structure: str
    n: int
    m: int
    g: int
    sparsity: float
    seeds: int
    energy_mean: float
    energy_std: float

    HEADER = "structure,n,m,g,sparsity,seeds,energy_mean,energy_std"

    def csv(self) -> str:
        return (f"{self.structure},{self.n},{self.m},{self.g},{self.sparsity:.6f},{self.seeds},"
                f"{self.energy_mean:.10f},{self.energy_std:.10f}")


def gaussian(rows: int, cols: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((rows, cols))


def energy_samples(rows, cols, n, m, groups=(1, 4, 16), block=4, seeds=5, seed=0) -> dict:
    """Per-seed energies keyed by (structure, g); g is 0 for non-grouped structures."""
    out: dict = {}
    for s in range(seeds):
        x = gaussian(rows, cols, seed + s)
        for structure in ("unstructured", "nm"):
            out.setdefault((structure, 0), []).append(structure_energy(x, structure, n, m))
        for g in groups:
            out.setdefault(("nmg", g), []).append(structure_energy(x, "nmg", n, m, g))
        out.setdefault(("blocked", 0), []).append(structure_energy(x, "blocked", n, m, block=block))
    return out


def energy_sweep(rows=768, cols=3072, nm=((1, 2), (1, 4), (1, 8)), groups=(1, 4, 16),
                 block=4, seeds=5, seed=0) -> list:
    """Mean energy of every structure at every n:m sparsity point.

    A keep-all row at sparsity 0 is emitted first as a reference.
    """
    rows_out = [SweepRow("keep_all", 0, 0, 0, 0.0, seeds, 1.0, 0.0)]
    for n, m in nm:
        samples = energy_samples(rows, cols, n, m, groups, block, seeds, seed)
        for (structure, g), vals in samples.items():
            v = np.asarray(vals)
            rows_out.append(SweepRow(structure, n, m, g, 1.0 - n / m, seeds,
                                     float(v.mean()), float(v.std())))
    return rows_out
