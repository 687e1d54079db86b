"""Matrix files: STNM (dense), STNG (n:m:g encoded) and plain CSV."""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .core import DOUBLE, SINGLE, ContractError, MaskedMatrix, as_dense
from .nmg import GroupedNMMatrix, pattern_order

DENSE_MAGIC = b"STNM"
ENCODED_MAGIC = b"STNG"

_DTYPE_CODES = {np.dtype(SINGLE): 0, np.dtype(DOUBLE): 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}

_DENSE_HEADER = struct.Struct("<4sIIB")
_ENCODED_HEADER = struct.Struct("<4sIIIIIBBB")


class FormatError(ValueError):
    """A matrix file is truncated or has a bad header."""


def _dtype_code(dtype) -> int:
    try:
        return _DTYPE_CODES[np.dtype(dtype)]
    except KeyError:
        raise ContractError(f"only float32/float64 can be stored, got {dtype}") from None


def _code_dtype(code: int) -> np.dtype:
    try:
        return _CODE_DTYPES[code]
    except KeyError:
        raise FormatError(f"unknown dtype code {code}") from None


def dense_to_bytes(x) -> bytes:
    x = as_dense(x)
    if x.dtype not in _DTYPE_CODES:
        x = x.astype(DOUBLE)
    rows, cols = x.shape
    head = _DENSE_HEADER.pack(DENSE_MAGIC, rows, cols, _dtype_code(x.dtype))
    return head + x.astype(x.dtype.newbyteorder("<"), copy=False).tobytes()


def dense_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < _DENSE_HEADER.size:
        raise FormatError("file too short for an STNM header")
    magic, rows, cols, code = _DENSE_HEADER.unpack_from(buf)
    if magic != DENSE_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {DENSE_MAGIC!r}")
    dtype = _code_dtype(code).newbyteorder("<")
    body = buf[_DENSE_HEADER.size:]
    if len(body) != rows * cols * dtype.itemsize:
        raise FormatError(f"expected {rows * cols} values, payload has {len(body)} bytes")
    return np.frombuffer(body, dtype=dtype).astype(dtype.newbyteorder("="), copy=True).reshape(rows, cols)


def encoded_to_bytes(a: GroupedNMMatrix) -> bytes:
    rows, cols = a.shape
    head = _ENCODED_HEADER.pack(ENCODED_MAGIC, a.n, a.m, a.g, rows, cols, a.sparse_dim,
                                a.group_dim, _dtype_code(a.dtype))
    return (head + a.col_index.astype("<u2").tobytes()
            + a.values.astype(a.dtype.newbyteorder("<"), copy=False).tobytes())


def encoded_from_bytes(buf: bytes) -> GroupedNMMatrix:
    if len(buf) < _ENCODED_HEADER.size:
        raise FormatError("file too short for an STNG header")
    magic, n, m, g, rows, cols, sdim, gdim, code = _ENCODED_HEADER.unpack_from(buf)
    if magic != ENCODED_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {ENCODED_MAGIC!r}")
    dtype = _code_dtype(code)
    table = pattern_order(n, m)
    width = table.count * g
    s_len, g_len = (rows, cols) if sdim == 0 else (cols, rows)
    if s_len % m or g_len % width:
        raise FormatError(f"shape {(rows, cols)} does not fit {n}:{m}:{g}")
    ngc, nsb = g_len // width, s_len // m
    idx_shape = (ngc, nsb, table.count, g)
    val_shape = (ngc, nsb, table.count, g, n)
    off = _ENCODED_HEADER.size
    idx_bytes = int(np.prod(idx_shape)) * 2
    val_bytes = int(np.prod(val_shape)) * dtype.itemsize
    if len(buf) != off + idx_bytes + val_bytes:
        raise FormatError("STNG payload length does not match its header")
    col_index = np.frombuffer(buf, "<u2", count=idx_bytes // 2, offset=off).astype(np.uint16)
    values = np.frombuffer(buf, dtype.newbyteorder("<"), offset=off + idx_bytes).astype(dtype)
    return GroupedNMMatrix(n, m, g, (rows, cols), sdim, gdim, values.reshape(val_shape),
                           col_index.reshape(idx_shape))


def write_dense(path, x):
    Path(path).write_bytes(dense_to_bytes(x))


def read_dense(path) -> np.ndarray:
    return dense_from_bytes(Path(path).read_bytes())


def write_encoded(path, a: GroupedNMMatrix):
    Path(path).write_bytes(encoded_to_bytes(a))


def read_encoded(path) -> GroupedNMMatrix:
    return encoded_from_bytes(Path(path).read_bytes())


def write_csv(path, x):
    # repr precision so a CSV roundtrip is exact
    x = as_dense(x)
    with open(path, "w") as fh:
        for row in x:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_csv(path) -> np.ndarray:
    try:
        x = np.loadtxt(path, delimiter=",", dtype=DOUBLE, ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return as_dense(x)


def read_matrix(path) -> np.ndarray:
    """Read a dense matrix, picking the format from the file's first bytes."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == DENSE_MAGIC:
        return read_dense(path)
    if head == ENCODED_MAGIC:
        return read_encoded(path).to_dense()
    return read_csv(path)


def save_checkpoint(directory, params, extra: dict | None = None) -> Path:
    """Write each parameter to its own file plus a ``manifest.json``.

    Dense values go to STNM, n:m:g values to STNG, and a masked parameter
    to an STNM of its values with a 0/1 STNM mask beside it.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    for p in params:
        v = p.value
        entry = {"name": p.name, "shape": list(v.shape)}
        if isinstance(v, GroupedNMMatrix):
            entry.update(layout=str(v.layout), file=f"{p.name}.stng")
            write_encoded(d / entry["file"], v)
        elif isinstance(v, MaskedMatrix):
            entry.update(layout="masked", file=f"{p.name}.stnm", mask=f"{p.name}.mask.stnm")
            write_dense(d / entry["file"], v.dense)
            write_dense(d / entry["mask"], v.mask.astype(v.dense.dtype))
        else:
            entry.update(layout="dense", file=f"{p.name}.stnm")
            write_dense(d / entry["file"], v)
        entries.append(entry)
    manifest = {"parameters": entries, **(extra or {})}
    path = d / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(directory) -> dict:
    """Parameter values by name, in the layouts they were saved in."""
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    out = {}
    for e in manifest["parameters"]:
        if e["layout"] == "masked":
            out[e["name"]] = MaskedMatrix(read_dense(d / e["file"]), read_dense(d / e["mask"]) != 0)
        elif e["layout"] == "dense":
            out[e["name"]] = read_dense(d / e["file"])
        else:
            out[e["name"]] = read_encoded(d / e["file"])
    return out
