"""Sparsifiers: rules deciding which values of a matrix to keep.

Every sparsifier is a small frozen dataclass. :func:`apply` turns one into a
:class:`~nmgsparse.core.MaskedMatrix`; kept values are never modified. Ties
are always broken in favour of keeping the lower linear index.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Any

import numpy as np

from .core import (
    ContractError,
    CooMatrix,
    CsrMatrix,
    MaskedMatrix,
    ShapeError,
    as_dense,
    support,
)
from .nmg import GroupedNMMatrix, from_dense_greedy
from .nmg.convert import encode

log = logging.getLogger(__name__)


class SparsifierClass(Enum):
    STREAMING = "streaming"
    BLOCKING = "blocking"
    MATERIALIZING = "materializing"


def _check_fraction(name, v):
    if not (0.0 <= v <= 1.0):
        raise ContractError(f"{name} must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class KeepAll:
    kind = "keep_all"


@dataclass(frozen=True)
class RandomFraction:
    """Drop each entry independently with probability ``p``."""

    p: float
    seed: int

    kind = "random_fraction"

    def __post_init__(self):
        _check_fraction("p", self.p)
        if not (0 <= self.seed < 2**64):
            raise ContractError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class ScalarThreshold:
    """Drop entries whose magnitude is below ``t``."""

    t: float

    kind = "scalar_threshold"

    def __post_init__(self):
        if not self.t >= 0:
            raise ContractError(f"threshold must be non-negative, got {self.t}")


@dataclass(frozen=True)
class PerBlockFraction:
    """Keep the ``n`` largest magnitudes in every block of ``m`` along ``axis``."""

    n: int
    m: int
    axis: int = 1

    kind = "per_block_fraction"

    def __post_init__(self):
        if not (0 <= self.n <= self.m) or self.m < 1:
            raise ContractError(f"need 0 <= n <= m, got {self.n}:{self.m}")
        if self.axis not in (0, 1):
            raise ContractError("axis must be 0 or 1")


@dataclass(frozen=True)
class ScalarFraction:
    """Magnitude pruning: drop the fraction ``f`` of smallest-magnitude entries."""

    f: float

    kind = "scalar_fraction"

    def __post_init__(self):
        _check_fraction("f", self.f)


@dataclass(frozen=True)
class BlockwiseFraction:
    """Drop whole ``block_rows`` x ``block_cols`` blocks with the smallest L1 sum."""

    f: float
    block_rows: int
    block_cols: int

    kind = "blockwise_fraction"

    def __post_init__(self):
        _check_fraction("f", self.f)
        if self.block_rows < 1 or self.block_cols < 1:
            raise ContractError("block sizes must be positive")


@dataclass(frozen=True)
class GroupedNM:
    n: int
    m: int
    g: int
    sparse_dim: int = 1
    group_dim: int = 0

    kind = "grouped_nm"

    def __post_init__(self):
        if not (1 <= self.n < self.m) or self.g < 1:
            raise ContractError(f"invalid n:m:g parameters {self.n}:{self.m}:{self.g}")


@dataclass(frozen=True)
class SameFormat:
    """Re-sparsify into the layout and pattern of ``reference``.

    The reference is runtime state, not configuration: it is excluded from
    equality, hashing and serialization.
    """

    reference: Any = field(default=None, compare=False, hash=False, repr=False)

    kind = "same_format"


SPARSIFIERS = {
    cls.kind: cls
    for cls in (KeepAll, RandomFraction, ScalarThreshold, PerBlockFraction,
                ScalarFraction, BlockwiseFraction, GroupedNM, SameFormat)
}

_CLASSES = {
    "keep_all": SparsifierClass.STREAMING,
    "random_fraction": SparsifierClass.STREAMING,
    "scalar_threshold": SparsifierClass.STREAMING,
    "per_block_fraction": SparsifierClass.BLOCKING,
    "grouped_nm": SparsifierClass.BLOCKING,
    "scalar_fraction": SparsifierClass.MATERIALIZING,
    "blockwise_fraction": SparsifierClass.MATERIALIZING,
    # needs the whole reference before deciding
    "same_format": SparsifierClass.MATERIALIZING,
}


def classify(s) -> SparsifierClass:
    return _CLASSES[s.kind]


# ---------------------------------------------------------------------------
# serialization


def to_json(s) -> str:
    d = {"kind": s.kind}
    d.update({f.name: getattr(s, f.name) for f in fields(s) if f.name != "reference"})
    return json.dumps(d, sort_keys=True)


def from_json(text) -> Any:
    d = json.loads(text) if isinstance(text, str) else dict(text)
    try:
        cls = SPARSIFIERS[d.pop("kind")]
    except KeyError as exc:
        raise ContractError(f"unknown or missing sparsifier kind in {text!r}") from exc
    return cls(**d)


# ---------------------------------------------------------------------------
# mask rules

def _splitmix64(z: np.ndarray) -> np.ndarray:
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def counter_uniform(seed: int, index: np.ndarray) -> np.ndarray:
    """Uniform [0, 1) draws keyed by (seed, index), independent of visiting order."""
    with np.errstate(over="ignore"):
        key = _splitmix64(np.asarray([seed], dtype=np.uint64))[0]
        z = _splitmix64(np.asarray(index, dtype=np.uint64) ^ key)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def _top_k_mask(mag: np.ndarray, k: int) -> np.ndarray:
    """Keep the k largest values of a flat array, lower index first on ties."""
    size = mag.size
    keep = np.zeros(size, dtype=bool)
    if k <= 0:
        return keep
    if k >= size:
        keep[:] = True
        return keep
    thr = np.partition(mag, size - k)[size - k]
    above = mag > thr
    keep |= above
    ties = np.flatnonzero(mag == thr)
    keep[ties[: k - int(above.sum())]] = True
    return keep


def _kept_count(f: float, size: int) -> int:
    # tolerance keeps e.g. (1 - 0.7) * 10 from rounding up to 4
    return min(size, max(0, math.ceil((1.0 - f) * size - 1e-9)))


def _mask_keep_all(s, x):
    return np.ones(x.shape, dtype=bool)


def _mask_random(s: RandomFraction, x):
    u = counter_uniform(s.seed, np.arange(x.size, dtype=np.uint64))
    return (u >= s.p).reshape(x.shape)


def _mask_threshold(s: ScalarThreshold, x):
    return ~(np.abs(x) < s.t)


def _mask_per_block(s: PerBlockFraction, x):
    t = x if s.axis == 1 else x.T
    rows, length = t.shape
    if length % s.m:
        raise ShapeError(f"axis length {length} is not divisible by block size {s.m}")
    blocks = np.abs(t).reshape(rows, length // s.m, s.m)
    order = np.argsort(-blocks, axis=-1, kind="stable")
    keep = np.zeros(blocks.shape, dtype=bool)
    np.put_along_axis(keep, order[..., : s.n], True, axis=-1)
    keep = keep.reshape(rows, length)
    return keep if s.axis == 1 else np.ascontiguousarray(keep.T)


def _mask_scalar_fraction(s: ScalarFraction, x):
    k = _kept_count(s.f, x.size)
    return _top_k_mask(np.abs(x).ravel(), k).reshape(x.shape)


def _mask_blockwise(s: BlockwiseFraction, x):
    rows, cols = x.shape
    br, bc = s.block_rows, s.block_cols
    if rows % br or cols % bc:
        raise ShapeError(f"shape {x.shape} is not divisible into {br}x{bc} blocks")
    score = np.abs(x).reshape(rows // br, br, cols // bc, bc).sum(axis=(1, 3)).ravel()
    nblocks = score.size
    drop = nblocks - _kept_count(s.f, nblocks)
    # smallest score first; among equal scores drop the higher index first
    idx = np.arange(nblocks)
    order = np.lexsort((-idx, score))
    keep_blocks = np.ones(nblocks, dtype=bool)
    keep_blocks[order[:drop]] = False
    kb = keep_blocks.reshape(rows // br, cols // bc)
    return np.repeat(np.repeat(kb, br, axis=0), bc, axis=1)


def _mask_grouped(s: GroupedNM, x):
    return from_dense_greedy(x, s.n, s.m, s.g, s.sparse_dim, s.group_dim).support()


_RULES = {
    "keep_all": _mask_keep_all,
    "random_fraction": _mask_random,
    "scalar_threshold": _mask_threshold,
    "per_block_fraction": _mask_per_block,
    "scalar_fraction": _mask_scalar_fraction,
    "blockwise_fraction": _mask_blockwise,
    "grouped_nm": _mask_grouped,
}


def mask_of(s, x) -> np.ndarray:
    x = as_dense(x)
    if s.kind == "same_format":
        if s.reference is None:
            raise ContractError("SameFormat needs a reference matrix")
        return support(apply_same_format(s.reference, x))
    return _RULES[s.kind](s, x)


def apply(s, x) -> MaskedMatrix:
    """Sparsify dense ``x`` with sparsifier ``s``; kept values are untouched."""
    x = as_dense(x)
    return MaskedMatrix.from_dense(x, mask_of(s, x))


# ---------------------------------------------------------------------------
# same-format re-sparsification


def apply_same_format(reference, x):
    """Bring ``x`` into the layout (and where possible the pattern) of ``reference``.

    Masked, CSR and COO references keep their stored positions. A grouped
    n:m reference is re-converted greedily unless ``x`` is already zero
    outside the reference's support, in which case the reference's pattern
    assignment is reused and only the values are refreshed.
    """
    x = as_dense(x)
    if x.shape != tuple(reference.shape):
        raise ShapeError(f"shape mismatch {x.shape} vs reference {reference.shape}")
    if isinstance(reference, np.ndarray):
        return x
    if isinstance(reference, MaskedMatrix):
        return MaskedMatrix.from_dense(x, reference.mask)
    if isinstance(reference, CsrMatrix):
        return CsrMatrix.from_mask(x, reference.support())
    if isinstance(reference, CooMatrix):
        return CooMatrix.from_mask(x, reference.support())
    if isinstance(reference, GroupedNMMatrix):
        x = x.astype(reference.dtype, copy=False)
        keep = reference.support()
        if not np.any(x[~keep]):
            log.debug("same-format fast path: reusing n:m:g assignment")
            return encode(x, reference.n, reference.m, reference.g, reference.assignment(),
                          reference.sparse_dim, reference.group_dim)
        log.debug("same-format full path: support changed, re-converting")
        return from_dense_greedy(x, reference.n, reference.m, reference.g,
                                 reference.sparse_dim, reference.group_dim)
    raise ContractError(f"no same-format rule for {type(reference).__name__}")
