import json
import logging
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nmgsparse.core import (
    COO,
    CSR,
    DENSE,
    MASKED,
    CooMatrix,
    CsrMatrix,
    LayoutTag,
    MaskedMatrix,
    layout_of,
    support,
    to_dense,
)
from nmgsparse.dispatch import (
    LOSSLESS,
    ConversionRefused,
    DenseFallbackWarning,
    DispatchError,
    OperatorKey,
    OutputFormat,
    convert_lossless,
    default_registry,
    execute,
    expected_fallbacks,
    make_registry,
)
from nmgsparse.kernels import oracle_error
from nmgsparse.nmg import GroupedNMMatrix, from_dense_greedy
from nmgsparse.sparsifiers import (
    GroupedNM,
    KeepAll,
    SameFormat,
    ScalarFraction,
    ScalarThreshold,
    apply,
)

from conftest import gaussian

CSR_OUT = OutputFormat(KeepAll(), CSR, KeepAll(), CSR)


@pytest.fixture
def reg():
    return make_registry()


def sparse_pair(seed):
    a = gaussian((6, 8), seed=seed, zeros=0.6)
    b = gaussian((6, 8), seed=seed + 1, zeros=0.6)
    return a, b


def as_layout(x, kind):
    return {"dense": lambda: x, "masked": lambda: MaskedMatrix.from_dense(x, x != 0),
            "csr": lambda: CsrMatrix.from_dense(x), "coo": lambda: CooMatrix.from_dense(x)}[kind]()


def test_add_csr_union_support(reg):
    a, b = sparse_pair(1)
    b[0, 0], a[0, 0] = 1.0, -1.0  # cancellation keeps the position stored
    res = reg.execute("add", [CsrMatrix.from_dense(a), CsrMatrix.from_dense(b)], [CSR_OUT])
    assert res.outcome == "exact" and not res.warnings
    out = res.output
    assert isinstance(out, CsrMatrix)
    assert np.array_equal(support(out), (a != 0) | (b != 0))
    assert np.array_equal(to_dense(out), a + b)


def test_register_then_lookup(reg):
    key = OperatorKey("scale", (DENSE,))
    reg.register_dense_op("scale", lambda x: 2 * x)
    reg.register_op(key, lambda inputs, fmts: 3 * inputs[0])
    impl, generic = reg.lookup("scale", (DENSE,))
    assert generic
    res = reg.execute("scale", [np.ones((2, 2))])
    assert res.outcome == "exact"
    assert np.array_equal(res.output, np.full((2, 2), 3.0))


def test_duplicate_registration_warns_and_replaces(reg, caplog):
    key = OperatorKey("relu", (CSR,))
    reg.register_op(key, lambda inputs, fmts: "first")
    with pytest.warns(DenseFallbackWarning), caplog.at_level(logging.WARNING):
        reg.register_op(key, lambda inputs, fmts: "second")
    assert reg.lookup("relu", (CSR,))[0](None, None) == "second"
    assert [w.path for w in reg.warnings] == ["duplicate_registration"]
    assert "replacing" in caplog.text


def test_decorator_registration(reg):
    @reg.register_fwd_op_impl("relu", [COO])
    def relu_coo(inputs, fmts):
        x = inputs[0]
        return np.maximum(x.to_dense(), 0)

    x = gaussian((3, 3), seed=2)
    res = reg.execute("relu", [CooMatrix.from_dense(x)])
    assert res.outcome == "exact"
    assert np.array_equal(res.output, np.maximum(x, 0))


def test_parameters_are_part_of_key(reg):
    reg.register_op(OperatorKey("relu", (LayoutTag.grouped_nm(2, 4, 3),)), lambda i, f: None)
    assert reg.lookup("relu", (LayoutTag.grouped_nm(2, 4, 3),))[0] is not None
    assert reg.lookup("relu", (LayoutTag.grouped_nm(2, 4, 4),))[0] is None


def test_exact_output_format_beats_generic(reg):
    marker = OutputFormat(ScalarThreshold(0.1), CSR, KeepAll(), CSR)
    reg.register_op(OperatorKey("add", (CSR, CSR), (marker,)),
                    lambda inputs, fmts: CsrMatrix.from_dense(np.zeros((6, 8))))
    a, b = sparse_pair(3)
    args = [CsrMatrix.from_dense(a), CsrMatrix.from_dense(b)]
    assert not to_dense(reg.execute("add", args, [marker]).output).any()
    assert np.array_equal(to_dense(reg.execute("add", args, [CSR_OUT]).output), a + b)


def test_relu_nmg_dense_fallback_one_warning(reg, caplog):
    w = from_dense_greedy(gaussian((12, 8), seed=4), 1, 2, 3)
    with warnings.catch_warnings(record=True) as caught, caplog.at_level(logging.WARNING):
        warnings.simplefilter("always")
        res = reg.execute("relu", [w])
    assert res.outcome == "dense_fallback"
    assert np.array_equal(res.output, np.maximum(w.to_dense(), 0))
    assert len(res.warnings) == 1 and res.warnings[0].path == "dense_fallback"
    assert len(reg.warnings) == 1
    assert len([c for c in caught if issubclass(c.category, DenseFallbackWarning)]) == 1


def test_matmul_nmg_exact_via_kernel(reg):
    w = from_dense_greedy(gaussian((24, 16), seed=5), 2, 4, 2)
    x = gaussian((16, 7), seed=6)
    res = reg.execute("matmul", [w, x])
    assert res.outcome == "exact" and not res.warnings
    assert oracle_error(w.to_dense(), x, res.output) <= 1e-10


def test_matmul_dense_nmg_both_orientations(reg):
    x = gaussian((5, 16), seed=7)
    for w in (from_dense_greedy(gaussian((16, 12), seed=8), 1, 2, 3, 0, 1),
              from_dense_greedy(gaussian((16, 12), seed=8), 1, 4, 1, 1, 0)):
        res = reg.execute("matmul", [x, w])
        assert res.outcome == "exact"
        assert oracle_error(x, w.to_dense(), res.output) <= 1e-10


def test_matmul_coo_goes_via_conversion(reg):
    x = gaussian((6, 8), seed=9, zeros=0.5)
    b = gaussian((8, 3), seed=10)
    res = reg.execute("matmul", [CooMatrix.from_dense(x), b])
    assert res.outcome == "via_conversion"
    assert res.conversions == ((0, "coo", "csr"),)
    assert not res.warnings
    assert np.allclose(res.output, x @ b, rtol=0, atol=1e-12)


def test_dense_inputs_use_dense_op(reg):
    a, b = gaussian((3, 3), seed=1), gaussian((3, 3), seed=2)
    res = reg.execute("add", [a, b])
    assert res.outcome == "exact" and not res.warnings
    assert np.array_equal(res.output, a + b)


def test_force_dense(reg):
    a, b = sparse_pair(11)
    reg.force_dense.add("add")
    with expected_fallbacks():
        res = reg.execute("add", [CsrMatrix.from_dense(a), CsrMatrix.from_dense(b)])
    assert res.outcome == "dense_fallback"
    assert np.array_equal(res.output, a + b)


def test_unknown_op(reg):
    with pytest.raises(DispatchError):
        reg.execute("softmax", [np.ones((2, 2))])


def test_output_format_pipeline(reg):
    a, b = gaussian((6, 8), seed=12), gaussian((6, 8), seed=13)
    fmt = OutputFormat(ScalarThreshold(0.5), CSR, ScalarFraction(0.5), COO)
    res = reg.execute("add", [a, b], [fmt])
    out = res.output
    assert isinstance(out, CooMatrix)
    want = to_dense(apply(ScalarFraction(0.5), to_dense(apply(ScalarThreshold(0.5), a + b))))
    assert np.array_equal(to_dense(out), want)


def test_output_to_grouped_nm(reg):
    a, b = gaussian((12, 8), seed=14), gaussian((12, 8), seed=15)
    target = LayoutTag.grouped_nm(1, 2, 3)
    fmt = OutputFormat(GroupedNM(1, 2, 3), target, KeepAll(), target)
    out = reg.execute("add", [a, b], [fmt]).output
    assert isinstance(out, GroupedNMMatrix)
    assert np.array_equal(out.to_dense(), from_dense_greedy(a + b, 1, 2, 3).to_dense())


def test_grouped_nm_without_sparsifier_refused(reg):
    a = gaussian((12, 8), seed=16)
    target = LayoutTag.grouped_nm(1, 2, 3)
    with pytest.raises(DispatchError):
        reg.sparsify(ScalarThreshold(0.5), a, target)


def test_sparsifier_dense_route_warns():
    reg = make_registry()
    reg._sparsifiers.clear()
    with pytest.warns(DenseFallbackWarning):
        out = reg.sparsify(ScalarThreshold(0.5), gaussian((3, 3)), CSR)
    assert isinstance(out, CsrMatrix)
    assert reg.warnings[0].path == "sparsifier_dense_route"


def test_registered_sparsifier_impl_is_used(reg):
    calls = []

    def traced(spec, x, target, reference):
        calls.append(type(reference).__name__)
        return MaskedMatrix.from_dense(to_dense(x), reference.mask)

    reg.register_sparsifier_impl("same_format", "dense", "masked", traced)
    ref = MaskedMatrix.from_dense(np.ones((2, 2)), np.eye(2, dtype=bool))
    out = reg.sparsify(SameFormat(), np.full((2, 2), 5.0), MASKED, reference=ref)
    assert calls == ["MaskedMatrix"]
    assert np.array_equal(to_dense(out), 5 * np.eye(2))


def test_same_format_grouped_reuses_support(reg):
    w = from_dense_greedy(gaussian((18, 8), seed=17), 2, 4, 3)
    grad = gaussian((18, 8), seed=18)
    out = reg.sparsify(SameFormat(), grad, MASKED, reference=w)
    assert np.array_equal(support(out), w.support())


def test_convert_lossless_edges():
    x = gaussian((5, 6), seed=19, zeros=0.5)
    for src, targets in LOSSLESS.items():
        if src == "grouped_nm":
            continue
        for t in targets:
            out = convert_lossless(as_layout(x, src), LayoutTag(t))
            assert layout_of(out).kind == t
            assert np.array_equal(to_dense(out), x)


def test_convert_grouped_and_refusal():
    w = from_dense_greedy(gaussian((12, 8), seed=20), 1, 2, 3)
    assert np.array_equal(convert_lossless(w, DENSE), w.to_dense())
    assert np.array_equal(to_dense(convert_lossless(w, MASKED)), w.to_dense())
    with pytest.raises(ConversionRefused):
        convert_lossless(w.to_dense(), LayoutTag.grouped_nm(1, 2, 3))
    with pytest.raises(ConversionRefused):
        convert_lossless(CsrMatrix.from_dense(np.eye(2)), MASKED)


def test_csr_coo_roundtrip():
    x = gaussian((7, 4), seed=21, zeros=0.7)
    c = CsrMatrix.from_dense(x)
    back = convert_lossless(convert_lossless(c, COO), CSR)
    assert np.array_equal(back.row_ptr, c.row_ptr)
    assert np.array_equal(back.col_idx, c.col_idx)
    assert np.array_equal(back.values, c.values)


LAYOUTS = ["dense", "masked", "csr", "coo"]


@given(st.sampled_from(LAYOUTS), st.sampled_from(LAYOUTS), st.integers(0, 2**31))
def test_add_path_equivalence(la, lb, seed):
    reg = make_registry()
    a, b = gaussian((4, 6), seed=seed, zeros=0.5), gaussian((4, 6), seed=seed + 1, zeros=0.5)
    with expected_fallbacks():
        res = reg.execute("add", [as_layout(a, la), as_layout(b, lb)])
    assert np.array_equal(to_dense(res.output), a + b)
    assert bool(res.warnings) == (res.outcome == "dense_fallback")


@given(st.sampled_from(LAYOUTS + ["nmg"]), st.integers(0, 2**31))
def test_matmul_and_relu_path_equivalence(la, seed):
    reg = make_registry()
    a = gaussian((12, 8), seed=seed, zeros=0.3)
    a = from_dense_greedy(a, 1, 2, 3) if la == "nmg" else as_layout(a, la)
    b = gaussian((8, 5), seed=seed + 2)
    with expected_fallbacks():
        mm = reg.execute("matmul", [a, b]).output
        rl = reg.execute("relu", [a]).output
    assert oracle_error(to_dense(a), b, mm) <= 1e-10
    assert np.array_equal(to_dense(rl), np.maximum(to_dense(a), 0))


def test_linear_with_bias(reg):
    x = gaussian((5, 8), seed=22)
    w = from_dense_greedy(gaussian((12, 8), seed=23), 1, 2, 3)
    bias = gaussian((1, 12), seed=24)
    res = reg.execute("linear", [x, w, bias])
    assert res.outcome == "exact"
    assert np.allclose(res.output, x @ w.to_dense().T + bias, atol=1e-12)


def test_warning_json_lines(reg):
    w = from_dense_greedy(gaussian((12, 8), seed=25), 1, 2, 3)
    with expected_fallbacks():
        reg.execute("relu", [w])
    lines = reg.warnings_jsonl().splitlines()
    assert len(lines) == 1
    rec = json.loads(lines[0])
    assert set(rec) == {"op", "input_layouts", "path", "message"}
    assert rec["op"] == "relu" and rec["input_layouts"] == ["grouped_nm(1:2:3)"]


def test_dump_lists_registrations(reg):
    text = reg.dump()
    assert "fwd add('csr', 'csr')" in text
    assert "bwd matmul" in text
    assert "sparsifier grouped_nm" in text


def test_module_level_execute_uses_default_registry():
    assert default_registry() is default_registry()
    res = execute("relu", [np.array([[-1.0, 2.0]])])
    assert np.array_equal(res.output, [[0.0, 2.0]])
