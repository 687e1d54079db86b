from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nmgsparse.core import ContractError, ShapeError, energy, sparsity
from nmgsparse.nmg import (
    GroupedNMMatrix,
    assignment_magnitude,
    best_nm_energy_mask,
    check_assignment,
    columnwise_magnitudes,
    encode,
    from_dense_greedy,
    greedy_assignment,
    oracle_optimal,
    pad_to_format,
    pattern_order,
    refine_encoding,
    refine_exchange,
)

from conftest import gaussian

SMALL_FORMATS = [(1, 2, 1), (1, 2, 2), (1, 3, 2), (1, 4, 2), (2, 4, 1), (1, 2, 4)]
FORMATS = [(1, 2, 1), (1, 2, 3), (2, 4, 1), (2, 4, 2), (1, 4, 2), (3, 6, 1), (1, 8, 1), (2, 3, 2)]

EXAMPLE = np.array([[3.0, 1.0], [0.5, 2.0]])  # columns (3, 0.5) and (1, 2)


def random_shape(n, m, g, rows_mult, cols_mult):
    return m * rows_mult, comb(m, n) * g * cols_mult


def test_columnwise_magnitudes_example():
    mags = columnwise_magnitudes(EXAMPLE, pattern_order(1, 2))
    assert np.array_equal(mags, [[3.0, 0.5], [1.0, 2.0]])


def test_columnwise_magnitudes_zero_and_size():
    t = pattern_order(2, 4)
    mags = columnwise_magnitudes(np.zeros((4, 18)), t)
    assert mags.size == 108 and not mags.any()
    with pytest.raises(ShapeError):
        columnwise_magnitudes(np.zeros((3, 18)), t)
    with pytest.raises(ShapeError):
        columnwise_magnitudes(np.zeros((4, 7)), t)


def test_greedy_example():
    enc = from_dense_greedy(EXAMPLE, 1, 2, 1, sparse_dim=0, group_dim=1)
    assert np.array_equal(enc.to_dense(), [[3.0, 0.0], [0.0, 2.0]])
    assert energy(enc.to_dense(), EXAMPLE) == pytest.approx(5 / 6.5)
    best = oracle_optimal(EXAMPLE, 1, 2, 1)
    t = pattern_order(1, 2)
    assert assignment_magnitude(EXAMPLE, best, t) == 5.0


def test_exchange_repairs_swapped_start():
    t = pattern_order(1, 2)
    fixed = refine_exchange(EXAMPLE, np.array([1, 0]), t)
    assert list(fixed) == [0, 1]
    assert assignment_magnitude(EXAMPLE, fixed, t) == 5.0


def test_exchange_fixed_point():
    t = pattern_order(1, 2)
    assert list(refine_exchange(EXAMPLE, np.array([0, 1]), t)) == [0, 1]


def test_oracle_scaled_identity():
    chunk = np.diag([1.0, 2.0, 3.0])
    best = oracle_optimal(chunk, 1, 3, 1)
    assert list(best) == [0, 1, 2]
    t = pattern_order(1, 3)
    assert assignment_magnitude(chunk, best, t) == chunk.sum()


def test_oracle_zero_chunk_and_bound():
    t = pattern_order(1, 2)
    assert assignment_magnitude(np.zeros((2, 4)), oracle_optimal(np.zeros((2, 4)), 1, 2, 2), t) == 0
    with pytest.raises(ContractError):
        oracle_optimal(np.zeros((4, 12)), 1, 4, 3)


def test_zero_matrix_encodes_to_zero():
    enc = from_dense_greedy(np.zeros((24, 8)), 2, 4, 2)
    assert not enc.to_dense().any()


def test_divisibility_errors():
    with pytest.raises(ShapeError):
        from_dense_greedy(np.ones((6, 12)), 2, 4, 1, sparse_dim=0, group_dim=1)
    with pytest.raises(ShapeError):
        from_dense_greedy(np.ones((8, 10)), 2, 4, 1, sparse_dim=0, group_dim=1)
    padded = pad_to_format(np.ones((6, 10)), 2, 4, 1, sparse_dim=0)
    assert padded.shape == (8, 12)
    assert from_dense_greedy(padded, 2, 4, 1, sparse_dim=0, group_dim=1).shape == (8, 12)


def test_spec_shape_64_by_72():
    x = gaussian((64, 72), seed=3)
    enc = from_dense_greedy(x, 2, 4, 3, sparse_dim=0, group_dim=1)
    assert enc.values.shape == (72 // 18, 64 // 4, 6, 3, 2)


def test_equal_magnitudes_are_deterministic():
    x = np.ones((4, 12))
    a = from_dense_greedy(x, 1, 4, 3, sparse_dim=0, group_dim=1)
    b = from_dense_greedy(x, 1, 4, 3, sparse_dim=0, group_dim=1)
    assert a.same_encoding(b)
    # ties: lower column first, then lower pattern id
    assert list(a.assignment()[0, 0]) == [0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3]


def test_invalid_assignment_rejected():
    with pytest.raises(ContractError):
        check_assignment(np.array([0, 0, 1, 1]), 2, 1)
    with pytest.raises(ContractError):
        refine_exchange(EXAMPLE, np.array([0, 0]), pattern_order(1, 2))
    with pytest.raises(ContractError):
        encode(EXAMPLE, 1, 2, 1, np.array([[[0, 0]]]), sparse_dim=0, group_dim=1)


def test_malformed_encoding_rejected():
    enc = from_dense_greedy(gaussian((4, 4)), 1, 2, 1, sparse_dim=0, group_dim=1)
    idx = enc.col_index.copy()
    idx[...] = 0
    with pytest.raises(Exception):
        GroupedNMMatrix(1, 2, 1, enc.shape, 0, 1, enc.values, idx)


@pytest.mark.parametrize("n,m,g", FORMATS)
@pytest.mark.parametrize("sparse_dim", [0, 1])
def test_encoding_invariants(n, m, g, sparse_dim):
    s_len, g_len = random_shape(n, m, g, 3, 2)
    shape = (s_len, g_len) if sparse_dim == 0 else (g_len, s_len)
    x = gaussian(shape, seed=n * 100 + m * 10 + g)
    enc = from_dense_greedy(x, n, m, g, sparse_dim, 1 - sparse_dim)
    a = enc.assignment()
    check_assignment(a, comb(m, n), g)
    # col_index restricted to a chunk is a permutation
    flat = enc.col_index.reshape(enc.col_index.shape[0], enc.col_index.shape[1], -1)
    assert np.all(np.sort(flat, axis=-1) == np.arange(comb(m, n) * g))
    dec = enc.to_dense()
    keep = enc.support()
    assert np.array_equal(dec[keep], x[keep])
    assert not dec[~keep].any()
    assert sparsity(dec) == pytest.approx(1 - n / m)
    # n:m holds along the sparse axis
    t = dec if sparse_dim == 0 else dec.T
    per_block = (t != 0).reshape(t.shape[0] // m, m, -1).sum(axis=1)
    assert np.all(per_block == n)


@pytest.mark.parametrize("n,m,g", FORMATS)
def test_conforming_input_roundtrips(n, m, g):
    x = gaussian(random_shape(n, m, g, 2, 2), seed=7)
    dec = from_dense_greedy(x, n, m, g, 0, 1).to_dense()
    again = from_dense_greedy(dec, n, m, g, 0, 1)
    assert np.array_equal(again.to_dense(), dec)


@given(st.sampled_from(FORMATS), st.integers(0, 2**31), st.floats(0, 0.6))
def test_sparsity_at_least_target(fmt, seed, zeros):
    n, m, g = fmt
    x = gaussian(random_shape(n, m, g, 2, 1), seed=seed, zeros=zeros)
    dec = from_dense_greedy(x, n, m, g, 0, 1).to_dense()
    assert sparsity(dec) >= 1 - n / m - 1e-12


@given(st.sampled_from(FORMATS), st.integers(0, 2**31))
def test_grouped_never_beats_plain_nm(fmt, seed):
    n, m, g = fmt
    x = gaussian(random_shape(n, m, g, 3, 2), seed=seed)
    grouped = energy(from_dense_greedy(x, n, m, g, 0, 1).to_dense(), x)
    plain = np.abs(x[best_nm_energy_mask(x, n, m, sparse_dim=0)]).sum() / np.abs(x).sum()
    assert grouped <= plain + 1e-12


@given(st.sampled_from(SMALL_FORMATS), st.integers(0, 2**31))
def test_greedy_and_exchange_bounded_by_oracle(fmt, seed):
    n, m, g = fmt
    t = pattern_order(n, m)
    chunk = gaussian((m, t.count * g), seed=seed)
    greedy = greedy_assignment(chunk, t, g)
    refined = refine_exchange(chunk, greedy, t)
    best = oracle_optimal(chunk, n, m, g)
    e_g, e_x, e_o = (assignment_magnitude(chunk, a, t) for a in (greedy, refined, best))
    assert e_g <= e_o + 1e-12
    assert e_g <= e_x + 1e-12 <= e_o + 2e-12


@given(st.integers(0, 2**31))
def test_exchange_from_random_start(seed):
    # 4x12 chunk, 1:4:3, random valid starting assignment
    r = np.random.default_rng(seed)
    t = pattern_order(1, 4)
    chunk = r.standard_normal((4, 12))
    start = r.permutation(np.repeat(np.arange(4), 3))
    out = refine_exchange(chunk, start, t)
    check_assignment(out, 4, 3)
    assert assignment_magnitude(chunk, out, t) >= assignment_magnitude(chunk, start, t) - 1e-12


def test_refine_encoding_improves_on_greedy():
    x = gaussian((16, 48), seed=11)
    enc = from_dense_greedy(x, 2, 4, 4, 0, 1)
    better = refine_encoding(x, enc)
    assert energy(better.to_dense(), x) >= energy(enc.to_dense(), x)
    assert from_dense_greedy(x, 2, 4, 4, 0, 1, refine=True).same_encoding(better)


def test_transpose_shares_encoding():
    x = gaussian((12, 8), seed=2)
    enc = from_dense_greedy(x, 1, 2, 3)
    assert np.array_equal(enc.T.to_dense(), enc.to_dense().T)
    assert enc.T.T.same_encoding(enc)


def test_values_layout_order():
    # chunk-major, then pattern, then group position, then ascending positions
    x = np.arange(1.0, 1 + 4 * 12).reshape(4, 12)
    enc = from_dense_greedy(x, 2, 4, 1, 0, 1)
    t = enc.table
    for gc in range(enc.values.shape[0]):
        for p in range(t.count):
            col = gc * 6 + int(enc.col_index[gc, 0, p, 0])
            assert list(enc.values[gc, 0, p, 0]) == list(x[t.patterns[p], col])


def test_deterministic_bytes():
    x = gaussian((24, 48), seed=5)
    a = from_dense_greedy(x, 1, 4, 3)
    b = from_dense_greedy(x.copy(), 1, 4, 3)
    assert a.values.tobytes() == b.values.tobytes()
    assert a.col_index.tobytes() == b.col_index.tobytes()
