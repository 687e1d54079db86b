import json

import numpy as np
import pytest

from nmgsparse.core import ContractError, MaskedMatrix, to_dense
from nmgsparse.io import (
    FormatError,
    dense_from_bytes,
    dense_to_bytes,
    encoded_from_bytes,
    encoded_to_bytes,
    load_checkpoint,
    read_csv,
    read_matrix,
    save_checkpoint,
    write_csv,
    write_dense,
    write_encoded,
)
from nmgsparse.nmg import from_dense_greedy
from nmgsparse.train import MLP, SparseParameter, prune_layers

from conftest import gaussian


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_dense_roundtrip(dtype):
    x = gaussian((3, 5)).astype(dtype)
    back = dense_from_bytes(dense_to_bytes(x))
    assert back.dtype == dtype and np.array_equal(back, x)


def test_dense_header_layout():
    buf = dense_to_bytes(np.ones((2, 3), np.float32))
    assert buf[:4] == b"STNM"
    assert len(buf) == 13 + 6 * 4


@pytest.mark.parametrize("sdim", [0, 1])
def test_encoded_roundtrip(sdim):
    x = gaussian((12, 12), seed=2).astype(np.float32)
    enc = from_dense_greedy(x, 1, 2, 3, sdim, 1 - sdim)
    back = encoded_from_bytes(encoded_to_bytes(enc))
    assert back.same_encoding(enc)
    assert back.values.dtype == np.float32


@pytest.mark.parametrize("mutate", [
    lambda b: b[:5],
    lambda b: b"XXXX" + b[4:],
    lambda b: b + b"\0",
    lambda b: b[:-1],
])
def test_corrupt_dense_rejected(mutate):
    with pytest.raises(FormatError):
        dense_from_bytes(mutate(dense_to_bytes(np.ones((2, 2)))))


def test_corrupt_encoded_rejected():
    buf = encoded_to_bytes(from_dense_greedy(gaussian((4, 4)), 1, 2, 1))
    with pytest.raises(FormatError):
        encoded_from_bytes(buf[:-3])
    with pytest.raises(FormatError):
        encoded_from_bytes(b"STNM" + buf[4:])
    with pytest.raises(FormatError):
        encoded_from_bytes(buf[:10])


def test_bad_dtype_code():
    buf = bytearray(dense_to_bytes(np.ones((1, 1))))
    buf[12] = 7
    with pytest.raises(FormatError):
        dense_from_bytes(bytes(buf))


def test_integer_input_stored_as_double():
    assert dense_from_bytes(dense_to_bytes(np.ones((2, 2), dtype=np.int64))).dtype == np.float64


def test_csv_roundtrip_is_exact(tmp_path):
    x = gaussian((4, 3), seed=3)
    write_csv(tmp_path / "x.csv", x)
    assert np.array_equal(read_csv(tmp_path / "x.csv"), x)


def test_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("1,2\n3,abc\n")
    with pytest.raises(FormatError):
        read_csv(p)


def test_read_matrix_detects_format(tmp_path):
    x = gaussian((12, 4), seed=4)
    write_dense(tmp_path / "a.stnm", x)
    write_csv(tmp_path / "a.csv", x)
    enc = from_dense_greedy(x, 1, 2, 3)
    write_encoded(tmp_path / "a.stng", enc)
    assert np.array_equal(read_matrix(tmp_path / "a.stnm"), x)
    assert np.array_equal(read_matrix(tmp_path / "a.csv"), x)
    assert np.array_equal(read_matrix(tmp_path / "a.stng"), enc.to_dense())


def test_checkpoint_roundtrip(tmp_path):
    model = MLP((8, 6, 1), seed=1)
    prune_layers(model, model.layer_names, 0.5)
    enc = from_dense_greedy(gaussian((12, 4), seed=5), 1, 2, 3)
    params = model.parameters + [SparseParameter(enc, "G")]
    save_checkpoint(tmp_path, params, {"seed": 1})
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["seed"] == 1
    assert {e["layout"] for e in manifest["parameters"]} == {"masked", "dense", "grouped_nm(1:2:3)"}
    back = load_checkpoint(tmp_path)
    for p in model.parameters:
        assert np.array_equal(to_dense(back[p.name]), p.dense())
    assert np.array_equal(back["W1"].mask, model.weights[0].value.mask)
    assert isinstance(back["W1"], MaskedMatrix)
    assert back["G"].same_encoding(enc)


def test_unsupported_dtype():
    with pytest.raises(ContractError):
        encoded_to_bytes(from_dense_greedy(gaussian((4, 4)).astype(np.float16), 1, 2, 1))
