"""The grouped n:m (n:m:g) encoded matrix."""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from ..core import LayoutTag, ShapeError, StructureError, _frozen, as_dense
from .patterns import PatternTable, pattern_order

MAX_CHUNK_WIDTH = 1 << 16


def oriented(shape, sparse_dim: int) -> tuple:
    """(sparse-axis length, group-axis length) of a 2-D shape."""
    if sparse_dim == 0:
        return shape[0], shape[1]
    return shape[1], shape[0]


def check_axes(sparse_dim: int, group_dim: int):
    if {sparse_dim, group_dim} != {0, 1}:
        raise ShapeError(f"sparse_dim and group_dim must be 0 and 1 in some order, "
                         f"got {sparse_dim}, {group_dim}")


def check_divisible(shape, n: int, m: int, g: int, sparse_dim: int):
    s_len, g_len = oriented(shape, sparse_dim)
    width = comb(m, n) * g
    if width > MAX_CHUNK_WIDTH:
        raise ShapeError(f"chunk width {width} exceeds {MAX_CHUNK_WIDTH}")
    if s_len % m:
        raise ShapeError(f"sparse axis length {s_len} is not divisible by m={m}; pad first")
    if g_len % width:
        raise ShapeError(f"group axis length {g_len} is not divisible by C(m,n)*g={width}; pad first")


def padded_shape(shape, n: int, m: int, g: int, sparse_dim: int) -> tuple:
    width = comb(m, n) * g
    s_len, g_len = oriented(shape, sparse_dim)
    s_len = -(-s_len // m) * m
    g_len = -(-g_len // width) * width
    return (s_len, g_len) if sparse_dim == 0 else (g_len, s_len)


def pad_to_format(x, n: int, m: int, g: int, sparse_dim: int = 1) -> np.ndarray:
    """Zero-pad ``x`` at the high end of both axes to satisfy divisibility."""
    x = as_dense(x)
    rows, cols = padded_shape(x.shape, n, m, g, sparse_dim)
    if (rows, cols) == x.shape:
        return x
    out = np.zeros((rows, cols), dtype=x.dtype)
    out[: x.shape[0], : x.shape[1]] = x
    return out


def chunk_view(x: np.ndarray, m: int, width: int, sparse_dim: int) -> np.ndarray:
    """View a dense matrix as chunks of shape (m, width).

    Result axes are (group chunk, sparse block, position in block, column).
    """
    t = x if sparse_dim == 0 else x.T
    s_len, g_len = t.shape
    return t.reshape(s_len // m, m, g_len // width, width).transpose(2, 0, 1, 3)


@dataclass(frozen=True, eq=False)
class GroupedNMMatrix:
    """An n:m:g encoded matrix.

    ``values`` has shape (group chunks, sparse blocks, patterns, g, n): chunk
    major, then pattern (table order), then group position, then the n kept
    values in ascending position order. ``col_index`` has shape (group
    chunks, sparse blocks, patterns, g) and holds each stored column-block's
    offset inside its chunk along the group axis.
    """

    n: int
    m: int
    g: int
    shape: tuple
    sparse_dim: int
    group_dim: int
    values: np.ndarray
    col_index: np.ndarray

    def __post_init__(self):
        check_axes(self.sparse_dim, self.group_dim)
        shape = tuple(int(s) for s in self.shape)
        object.__setattr__(self, "shape", shape)
        check_divisible(shape, self.n, self.m, self.g, self.sparse_dim)
        table = self.table
        s_len, g_len = oriented(shape, self.sparse_dim)
        width = table.count * self.g
        expect = (g_len // width, s_len // self.m, table.count, self.g)
        values = np.asarray(self.values)
        col_index = np.asarray(self.col_index)
        if values.shape != expect + (self.n,):
            raise StructureError(f"values shape {values.shape} != {expect + (self.n,)}")
        if values.dtype.kind != "f":
            raise StructureError("values must be floating point")
        if col_index.shape != expect:
            raise StructureError(f"col_index shape {col_index.shape} != {expect}")
        flat = col_index.reshape(expect[0], expect[1], width).astype(np.int64)
        if not np.array_equal(np.sort(flat, axis=-1),
                              np.broadcast_to(np.arange(width), flat.shape)):
            raise StructureError("col_index is not a permutation inside every chunk")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "col_index", _frozen(col_index.astype(np.uint16)))

    # -- metadata -----------------------------------------------------------

    @property
    def table(self) -> PatternTable:
        return pattern_order(self.n, self.m)

    @property
    def layout(self) -> LayoutTag:
        return LayoutTag.grouped_nm(self.n, self.m, self.g)

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def chunk_width(self) -> int:
        return self.table.count * self.g

    @property
    def nnz(self) -> int:
        return self.values.size

    @property
    def chunk_grid(self) -> tuple:
        """(group chunks, sparse blocks)."""
        return self.col_index.shape[:2]

    # -- decoding -----------------------------------------------------------

    def _coordinates(self):
        ngc, nsb, count, g = self.col_index.shape
        width = self.chunk_width
        rows = (np.arange(nsb)[None, :, None, None, None] * self.m
                + self.table.patterns[None, None, :, None, :])
        cols = (np.arange(ngc)[:, None, None, None, None] * width
                + self.col_index[..., None].astype(np.int64))
        rows, cols = np.broadcast_arrays(rows, cols)
        return rows, cols

    def _scatter(self, fill, dtype) -> np.ndarray:
        t = np.zeros(oriented(self.shape, self.sparse_dim), dtype=dtype)
        rows, cols = self._coordinates()
        t[rows, cols] = fill
        return t if self.sparse_dim == 0 else np.ascontiguousarray(t.T)

    def to_dense(self) -> np.ndarray:
        return self._scatter(self.values, self.values.dtype)

    def support(self) -> np.ndarray:
        """Positions selected by the encoding (including stored zeros)."""
        return self._scatter(True, bool)

    def assignment(self) -> np.ndarray:
        """Pattern id of every column, shape (group chunks, sparse blocks, width)."""
        ngc, nsb, count, g = self.col_index.shape
        out = np.empty((ngc, nsb, count * g), dtype=np.int64)
        pid = np.broadcast_to(np.arange(count)[:, None], (count, g)).ravel()
        idx = self.col_index.reshape(ngc, nsb, count * g).astype(np.int64)
        np.put_along_axis(out, idx, np.broadcast_to(pid, idx.shape), axis=-1)
        return out

    def with_values(self, values) -> "GroupedNMMatrix":
        return GroupedNMMatrix(self.n, self.m, self.g, self.shape, self.sparse_dim,
                               self.group_dim, values, self.col_index)

    def transpose(self) -> "GroupedNMMatrix":
        """The transposed matrix; the encoding is shared, only the axis tags swap."""
        rows, cols = self.shape
        return GroupedNMMatrix(self.n, self.m, self.g, (cols, rows), 1 - self.sparse_dim,
                               1 - self.group_dim, self.values, self.col_index)

    @property
    def T(self) -> "GroupedNMMatrix":
        return self.transpose()

    def astype(self, dtype) -> "GroupedNMMatrix":
        return self.with_values(self.values.astype(dtype))

    def same_encoding(self, other: "GroupedNMMatrix") -> bool:
        return (
            isinstance(other, GroupedNMMatrix)
            and (self.n, self.m, self.g, self.shape, self.sparse_dim)
            == (other.n, other.m, other.g, other.shape, other.sparse_dim)
            and np.array_equal(self.col_index, other.col_index)
            and self.values.dtype == other.values.dtype
            and np.array_equal(self.values, other.values)
        )

    @classmethod
    def from_dense(cls, x, n, m, g, sparse_dim=1, group_dim=0, refine=False):
        from .convert import from_dense_greedy

        return from_dense_greedy(x, n, m, g, sparse_dim, group_dim, refine=refine)

    def __repr__(self):
        return (f"GroupedNMMatrix({self.n}:{self.m}:{self.g}, shape={self.shape}, "
                f"sparse_dim={self.sparse_dim}, dtype={self.values.dtype})")
