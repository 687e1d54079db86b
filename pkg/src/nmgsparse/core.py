"""Dense, masked and classical sparse matrix layouts, plus sparsity metrics.

Dense matrices are plain 2-D :class:`numpy.ndarray` objects. The other
layouts are frozen dataclasses whose arrays are made read-only on
construction, so every value is safe to share between threads.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional

import numpy as np


class StructureError(ValueError):
    """A matrix violates the structural invariants of its layout."""


class ShapeError(ValueError):
    """Operand shapes are incompatible or not divisible as required."""


class DegenerateInputError(ValueError):
    """The input makes the requested metric undefined."""


class ContractError(ValueError):
    """Arguments break a documented precondition."""


SINGLE = np.dtype(np.float32)
DOUBLE = np.dtype(np.float64)


def _frozen(a: np.ndarray) -> np.ndarray:
    if not a.flags.writeable and a.flags.c_contiguous:
        return a
    a = np.array(a, copy=True, order="C")
    a.flags.writeable = False
    return a


def as_dense(x: Any, dtype=None) -> np.ndarray:
    """Validate ``x`` as a non-empty 2-D real matrix and return it as an array."""
    a = np.asarray(x, dtype=dtype)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"matrix must be non-empty, got shape {a.shape}")
    if a.dtype.kind not in "fiub":
        raise StructureError(f"unsupported dtype {a.dtype}")
    if a.dtype.kind != "f":
        a = a.astype(DOUBLE)
    return a


# ---------------------------------------------------------------------------
# layout tags


@dataclass(frozen=True)
class LayoutTag:
    """Identifies a sparsity layout; grouped n:m carries its format parameters.

    A ``grouped_nm`` tag with all parameters ``None`` is a wildcard used when
    registering implementations that accept any n:m:g format.
    """

    kind: str
    n: Optional[int] = None
    m: Optional[int] = None
    g: Optional[int] = None

    KINDS = ("dense", "masked", "csr", "coo", "grouped_nm")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ContractError(f"unknown layout kind {self.kind!r}")
        params = (self.n, self.m, self.g)
        if self.kind != "grouped_nm":
            if any(p is not None for p in params):
                raise ContractError(f"layout {self.kind} takes no parameters")
            return
        if all(p is None for p in params):
            return
        if any(p is None for p in params):
            raise ContractError("grouped_nm needs all of n, m, g (or none)")
        # canonical python ints so numpy scalars hash identically
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "g", int(self.g))
        if not (1 <= self.n < self.m) or self.g < 1:
            raise ContractError(f"invalid n:m:g parameters {params}")

    @property
    def is_wildcard(self) -> bool:
        return self.kind == "grouped_nm" and self.n is None

    def matches(self, other: "LayoutTag") -> bool:
        """True if ``other`` satisfies this (possibly wildcard) tag."""
        if self.is_wildcard:
            return other.kind == "grouped_nm"
        return self == other

    def __str__(self):
        if self.kind == "grouped_nm" and not self.is_wildcard:
            return f"grouped_nm({self.n}:{self.m}:{self.g})"
        return self.kind

    @classmethod
    def grouped_nm(cls, n=None, m=None, g=None) -> "LayoutTag":
        return cls("grouped_nm", n, m, g)


DENSE = LayoutTag("dense")
MASKED = LayoutTag("masked")
CSR = LayoutTag("csr")
COO = LayoutTag("coo")


def layout_of(x: Any) -> LayoutTag:
    if isinstance(x, np.ndarray):
        return DENSE
    tag = getattr(x, "layout", None)
    if isinstance(tag, LayoutTag):
        return tag
    raise StructureError(f"object of type {type(x).__name__} has no sparsity layout")


# ---------------------------------------------------------------------------
# concrete layouts


@dataclass(frozen=True)
class MaskedMatrix:
    """Dense values plus a boolean keep-mask; masked-out values are exactly zero."""

    dense: np.ndarray
    mask: np.ndarray

    layout = MASKED

    def __post_init__(self):
        dense = as_dense(self.dense)
        mask = np.asarray(self.mask)
        if mask.dtype != np.bool_:
            raise StructureError("mask must be boolean")
        if mask.shape != dense.shape:
            raise StructureError(f"mask shape {mask.shape} != values shape {dense.shape}")
        if np.any(dense[~mask] != 0):
            raise StructureError("nonzero value at a masked-out position")
        object.__setattr__(self, "dense", _frozen(dense))
        object.__setattr__(self, "mask", _frozen(mask))

    @classmethod
    def from_dense(cls, x, mask) -> "MaskedMatrix":
        x = as_dense(x)
        mask = np.asarray(mask, dtype=bool)
        return cls(np.where(mask, x, x.dtype.type(0)), mask)

    @property
    def shape(self):
        return self.dense.shape

    @property
    def dtype(self):
        return self.dense.dtype

    @property
    def nnz(self) -> int:
        return int(self.mask.sum())

    def to_dense(self) -> np.ndarray:
        return self.dense.copy()


@dataclass(frozen=True)
class CsrMatrix:
    shape: tuple
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    layout = CSR

    def __post_init__(self):
        rows, cols = (int(s) for s in self.shape)
        if rows < 1 or cols < 1:
            raise StructureError(f"invalid shape {self.shape}")
        row_ptr = np.asarray(self.row_ptr, dtype=np.int64)
        col_idx = np.asarray(self.col_idx, dtype=np.int64)
        values = np.asarray(self.values)
        if values.dtype.kind != "f":
            values = values.astype(DOUBLE)
        if row_ptr.shape != (rows + 1,):
            raise StructureError("row_ptr must have rows+1 entries")
        nnz = len(values)
        if col_idx.shape != (nnz,) or values.ndim != 1:
            raise StructureError("col_idx and values must be 1-D of equal length")
        if row_ptr[0] != 0 or row_ptr[-1] != nnz or np.any(np.diff(row_ptr) < 0):
            raise StructureError("row_ptr must be non-decreasing from 0 to nnz")
        if nnz:
            if col_idx.min() < 0 or col_idx.max() >= cols:
                raise StructureError("column index out of range")
            # strictly increasing inside each row: a non-increase is only
            # allowed where a new row starts
            step = np.diff(col_idx) > 0
            starts = np.zeros(nnz, dtype=bool)
            starts[row_ptr[1:-1][row_ptr[1:-1] < nnz]] = True
            if not np.all(step | starts[1:]):
                raise StructureError("column indices must increase strictly within a row")
        object.__setattr__(self, "shape", (rows, cols))
        object.__setattr__(self, "row_ptr", _frozen(row_ptr))
        object.__setattr__(self, "col_idx", _frozen(col_idx))
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def from_dense(cls, x) -> "CsrMatrix":
        """Keep-all conversion; exact zeros are not stored."""
        x = as_dense(x)
        return cls.from_mask(x, x != 0)

    @classmethod
    def from_mask(cls, x, mask) -> "CsrMatrix":
        """Store exactly the positions selected by ``mask`` (explicit zeros allowed)."""
        x = as_dense(x)
        mask = np.asarray(mask, dtype=bool)
        r, c = np.nonzero(mask)
        counts = np.bincount(r, minlength=x.shape[0])
        row_ptr = np.concatenate(([0], np.cumsum(counts)))
        return cls(x.shape, row_ptr, c, x[r, c])

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def nnz(self) -> int:
        return len(self.values)

    def row_indices(self) -> np.ndarray:
        return np.repeat(np.arange(self.shape[0]), np.diff(self.row_ptr))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=self.values.dtype)
        out[self.row_indices(), self.col_idx] = self.values
        return out

    def support(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=bool)
        out[self.row_indices(), self.col_idx] = True
        return out


@dataclass(frozen=True)
class CooMatrix:
    """Coordinate list sorted by (row, col) without duplicates."""

    shape: tuple
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    layout = COO

    def __post_init__(self):
        nr, nc = (int(s) for s in self.shape)
        if nr < 1 or nc < 1:
            raise StructureError(f"invalid shape {self.shape}")
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        values = np.asarray(self.values)
        if values.dtype.kind != "f":
            values = values.astype(DOUBLE)
        if not (rows.shape == cols.shape == values.shape) or rows.ndim != 1:
            raise StructureError("rows, cols and values must be 1-D of equal length")
        if len(rows):
            if rows.min() < 0 or rows.max() >= nr or cols.min() < 0 or cols.max() >= nc:
                raise StructureError("coordinate out of range")
            lin = rows * nc + cols
            if np.any(np.diff(lin) <= 0):
                raise StructureError("entries must be sorted by (row, col) without duplicates")
        object.__setattr__(self, "shape", (nr, nc))
        object.__setattr__(self, "rows", _frozen(rows))
        object.__setattr__(self, "cols", _frozen(cols))
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def from_entries(cls, shape, entries) -> "CooMatrix":
        entries = sorted(entries, key=lambda e: (e[0], e[1]))
        if not entries:
            return cls(shape, [], [], np.zeros(0))
        r, c, v = zip(*entries)
        return cls(shape, r, c, np.asarray(v, dtype=DOUBLE))

    @classmethod
    def from_dense(cls, x) -> "CooMatrix":
        x = as_dense(x)
        return cls.from_mask(x, x != 0)

    @classmethod
    def from_mask(cls, x, mask) -> "CooMatrix":
        x = as_dense(x)
        r, c = np.nonzero(np.asarray(mask, dtype=bool))
        return cls(x.shape, r, c, x[r, c])

    @property
    def entries(self):
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.values.tolist()))

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def nnz(self) -> int:
        return len(self.values)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=self.values.dtype)
        out[self.rows, self.cols] = self.values
        return out

    def support(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=bool)
        out[self.rows, self.cols] = True
        return out


def csr_to_coo(a: CsrMatrix) -> CooMatrix:
    return CooMatrix(a.shape, a.row_indices(), a.col_idx, a.values)


def coo_to_csr(a: CooMatrix) -> CsrMatrix:
    counts = np.bincount(a.rows, minlength=a.shape[0])
    return CsrMatrix(a.shape, np.concatenate(([0], np.cumsum(counts))), a.cols, a.values)


# ---------------------------------------------------------------------------
# generic operations


def to_dense(x: Any) -> np.ndarray:
    """Decode any supported layout to a dense array (dense input is returned as is)."""
    if isinstance(x, np.ndarray):
        return as_dense(x)
    if hasattr(x, "to_dense"):
        return x.to_dense()
    raise StructureError(f"cannot decode object of type {type(x).__name__}")


def support(x: Any) -> np.ndarray:
    """Boolean map of stored positions (nonzeros for dense input)."""
    if isinstance(x, np.ndarray):
        return as_dense(x) != 0
    if isinstance(x, MaskedMatrix):
        return x.mask.copy()
    if hasattr(x, "support"):
        return x.support()
    return to_dense(x) != 0


def stored_count(x: Any) -> int:
    if isinstance(x, np.ndarray):
        return int(np.count_nonzero(x))
    return int(x.nnz)


def sparsity(x: Any) -> float:
    """Fraction of zero (non-stored) entries."""
    shape = x.shape
    size = shape[0] * shape[1]
    if size == 0:
        raise ShapeError("sparsity of an empty matrix is undefined")
    return (size - stored_count(x)) / size


def energy(pruned: Any, original: Any) -> float:
    """L1 magnitude retained by ``pruned`` relative to ``original``."""
    p = to_dense(pruned).astype(DOUBLE)
    x = to_dense(original).astype(DOUBLE)
    if p.shape != x.shape:
        raise ShapeError(f"shape mismatch {p.shape} vs {x.shape}")
    total = np.abs(x).sum()
    if total == 0:
        raise DegenerateInputError("original matrix has zero L1 norm")
    kept = p != 0
    if np.any(p[kept] != x[kept]):
        raise ContractError("pruned matrix is not a support-restriction of the original")
    return float(np.abs(p).sum() / total)
