"""Operator dispatch over sparsity layouts.

An operator call is resolved in a fixed order:

1. an implementation registered for the exact input layouts (and output
   formats, unless registered for any output format);
2. an implementation reachable by converting inputs losslessly, at most one
   conversion per input, fewest conversions first;
3. the dense fallback: inputs are decoded to masked dense form, the dense
   reference operator runs, and a warning is recorded.

Every output then goes through its :class:`OutputFormat`: the inline
sparsifier producing the temporary layout, then the external sparsifier
producing the output layout.
"""
from __future__ import annotations

import contextlib
import itertools
import json
import logging
import threading
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from .core import (
    CSR,
    DENSE,
    MASKED,
    CooMatrix,
    CsrMatrix,
    LayoutTag,
    MaskedMatrix,
    ShapeError,
    coo_to_csr,
    csr_to_coo,
    layout_of,
    support,
    to_dense,
)
from .kernels import csr_spmm, nmg_spmm
from .nmg import from_dense_greedy
from .sparsifiers import KeepAll, apply_same_format, mask_of

log = logging.getLogger(__name__)

BUILTIN_OPS = ("add", "matmul", "linear", "relu")


class DispatchError(RuntimeError):
    """No implementation or sparsification route exists for a call."""


class ConversionRefused(DispatchError):
    """The requested layout conversion cannot be guaranteed lossless."""


class DenseFallbackWarning(UserWarning):
    pass


@dataclass(frozen=True)
class OutputFormat:
    """(inline sparsifier, temporary layout, external sparsifier, output layout)."""

    inline: Any = KeepAll()
    tmp_layout: LayoutTag = DENSE
    external: Any = KeepAll()
    out_layout: LayoutTag = DENSE

    def __str__(self):
        return f"({self.inline.kind}, {self.tmp_layout}, {self.external.kind}, {self.out_layout})"


DENSE_OUTPUT = OutputFormat()


@dataclass(frozen=True)
class OperatorKey:
    """Registry key. ``output_formats=None`` matches any requested formats."""

    op_name: str
    input_layouts: tuple
    output_formats: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "input_layouts", tuple(self.input_layouts))
        if self.output_formats is not None:
            object.__setattr__(self, "output_formats", tuple(self.output_formats))

    def matches(self, op_name, layouts, out_formats) -> bool:
        return (
            self.op_name == op_name
            and len(self.input_layouts) == len(layouts)
            and all(k.matches(l) for k, l in zip(self.input_layouts, layouts))
            and (self.output_formats is None or self.output_formats == tuple(out_formats))
        )


@dataclass(frozen=True)
class WarningRecord:
    op: str
    input_layouts: tuple
    path: str
    message: str

    def to_json(self) -> str:
        return json.dumps({"op": self.op, "input_layouts": [str(l) for l in self.input_layouts],
                           "path": self.path, "message": self.message})


@dataclass
class DispatchResult:
    outcome: str  # "exact", "via_conversion" or "dense_fallback"
    outputs: tuple
    warnings: list = field(default_factory=list)
    conversions: tuple = ()

    @property
    def output(self):
        return self.outputs[0]


@contextlib.contextmanager
def expected_fallbacks():
    """Silence fallback warnings on stderr; the registry log still records them."""
    prev = log.level
    log.setLevel(logging.ERROR)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DenseFallbackWarning)
            yield
    finally:
        log.setLevel(prev)


# ---------------------------------------------------------------------------
# lossless conversion

LOSSLESS = {
    "dense": ("csr", "coo"),
    "masked": ("dense", "csr", "coo"),
    "csr": ("dense", "coo"),
    "coo": ("dense", "csr"),
    "grouped_nm": ("dense", "masked"),
}


def convert_lossless(x, target: LayoutTag):
    """Change layout without changing the decoded matrix; refuse anything else."""
    src = layout_of(x)
    if target.matches(src):
        return x
    if target.kind not in LOSSLESS[src.kind]:
        raise ConversionRefused(f"conversion {src} -> {target} is not guaranteed lossless")
    if target.kind == "dense":
        return to_dense(x)
    if target.kind == "masked":
        return MaskedMatrix(x.to_dense(), x.support())
    if src.kind == "csr":
        return csr_to_coo(x)
    if src.kind == "coo":
        return coo_to_csr(x)
    if src.kind == "masked":
        keep = x.mask
    else:
        keep = x != 0
    cls = CsrMatrix if target.kind == "csr" else CooMatrix
    return cls.from_mask(to_dense(x), keep)


# ---------------------------------------------------------------------------
# dense reference operators


def _linear(x, w, b=None):
    y = x @ w.T
    return y if b is None else y + b


def _mse_loss(pred, target):
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    d = pred - target
    return np.array([[np.mean(d * d)]])


def _matmul(a, b):
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    return a @ b


DENSE_OPS = {
    "add": lambda a, b: a + b,
    "matmul": _matmul,
    "linear": _linear,
    "relu": lambda a: np.maximum(a, 0),
    # custom op used by the training graph
    "mse_loss": _mse_loss,
}


def _layout_from_dense(x, keep, target: LayoutTag, source_is_dense: bool):
    if target.kind == "dense":
        return np.where(keep, x, x.dtype.type(0))
    if target.kind == "masked":
        return MaskedMatrix.from_dense(x, keep)
    if source_is_dense:
        # stored zeros only come from sparse inputs
        keep = keep & (x != 0)
    cls = CsrMatrix if target.kind == "csr" else CooMatrix
    return cls.from_mask(x, keep)


def generic_sparsify(spec, x, target: LayoutTag, reference=None):
    """Mask-based sparsification into a dense, masked, CSR or COO layout.

    The result keeps the positions selected by ``spec`` that are also stored
    in ``x`` (every position of a dense ``x`` for masked/dense targets).
    """
    dense = to_dense(x)
    if spec.kind == "same_format":
        ref = spec.reference if spec.reference is not None else reference
        if ref is None:
            raise DispatchError("SameFormat sparsification needs a reference")
        # into a mask layout: reuse the reference's stored positions as they are
        keep = (np.ones(dense.shape, dtype=bool) if isinstance(ref, np.ndarray)
                else support(ref))
    else:
        keep = mask_of(spec, dense)
    is_dense = isinstance(x, np.ndarray)
    if not is_dense:
        keep = keep & support(x)
    return _layout_from_dense(dense, keep, target, is_dense)


def _grouped_sparsify(spec, x, target, reference=None):
    enc = from_dense_greedy(to_dense(x), spec.n, spec.m, spec.g, spec.sparse_dim, spec.group_dim)
    if not target.matches(enc.layout):
        raise DispatchError(f"sparsifier produces {enc.layout}, requested {target}")
    return enc


def _same_format_sparsify(spec, x, target, reference=None):
    ref = spec.reference if spec.reference is not None else reference
    if ref is None:
        raise DispatchError("SameFormat sparsification needs a reference")
    out = apply_same_format(ref, to_dense(x))
    if not target.matches(layout_of(out)):
        return convert_lossless(out, target)
    return out


# ---------------------------------------------------------------------------
# registry


class DispatchRegistry:
    def __init__(self):
        self._fwd: dict = {}
        self._bwd: dict = {}
        self._sparsifiers: dict = {}
        self._dense_ops = dict(DENSE_OPS)
        self.force_dense: set = set()
        self._warnings: list = []
        self._lock = threading.Lock()

    # -- warnings -----------------------------------------------------------

    @property
    def warnings(self) -> list:
        with self._lock:
            return list(self._warnings)

    def _warn(self, op, layouts, path, message) -> WarningRecord:
        rec = WarningRecord(op, tuple(layouts), path, message)
        with self._lock:
            self._warnings.append(rec)
        log.warning("%s", message)
        warnings.warn(message, DenseFallbackWarning, stacklevel=3)
        return rec

    def warnings_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.warnings)

    # -- registration -------------------------------------------------------

    def register_op(self, key: OperatorKey, impl: Callable, backward: bool = False):
        table = self._bwd if backward else self._fwd
        if key in table:
            self._warn(key.op_name, key.input_layouts, "duplicate_registration",
                       f"replacing {'backward' if backward else 'forward'} implementation for {key}")
        table[key] = impl

    def register_fwd_op_impl(self, operator: str, inp, out=None):
        """Decorator form of :meth:`register_op`."""
        def deco(fn):
            self.register_op(OperatorKey(operator, tuple(inp), out), fn)
            return fn
        return deco

    def register_bwd_op_impl(self, operator: str, inp, out=None):
        def deco(fn):
            self.register_op(OperatorKey(operator, tuple(inp), out), fn, backward=True)
            return fn
        return deco

    def register_dense_op(self, name: str, fn: Callable):
        self._dense_ops[name] = fn

    def register_sparsifier_impl(self, kind: str, in_layout, out_layout, impl: Callable):
        """``in_layout``/``out_layout`` are layout kinds or ``"*"`` for any."""
        key = (kind, _kind(in_layout), _kind(out_layout))
        if key in self._sparsifiers:
            self._warn(f"sparsifier:{kind}", (), "duplicate_registration",
                       f"replacing sparsifier implementation for {key}")
        self._sparsifiers[key] = impl

    def known_op(self, name: str) -> bool:
        return name in self._dense_ops or any(k.op_name == name for k in self._fwd)

    def lookup(self, op_name, layouts, out_formats=None, backward=False):
        table = self._bwd if backward else self._fwd
        layouts = tuple(layouts)
        if out_formats is not None:
            exact = table.get(OperatorKey(op_name, layouts, tuple(out_formats)))
            if exact is not None:
                return exact, False
        generic = table.get(OperatorKey(op_name, layouts, None))
        if generic is not None:
            return generic, True
        # parameter wildcards (e.g. any n:m:g) last
        for key, impl in table.items():
            if key.matches(op_name, layouts, out_formats or ()):
                return impl, key.output_formats is None
        return None, False

    def _sparsifier_impl(self, kind, in_kind, out_kind):
        for key in ((kind, in_kind, out_kind), (kind, "*", out_kind), (kind, in_kind, "*"),
                    (kind, "*", "*")):
            if key in self._sparsifiers:
                return self._sparsifiers[key]
        return None

    # -- sparsification -----------------------------------------------------

    def sparsify(self, spec, x, target: LayoutTag, reference=None, op="sparsify"):
        src = layout_of(x)
        if spec.kind == "keep_all" and target.matches(src):
            return x
        impl = self._sparsifier_impl(spec.kind, src.kind, target.kind)
        if impl is not None:
            return impl(spec, x, target, reference)
        if target.kind == "grouped_nm":
            raise DispatchError(f"no sparsifier implementation produces {target} from {spec.kind}")
        self._warn(op, (src,), "sparsifier_dense_route",
                   f"no {spec.kind} sparsifier for {src}->{target}; using dense route")
        return generic_sparsify(spec, x, target, reference)

    def apply_output_format(self, fmt: OutputFormat, raw, reference=None, op="output",
                            inline_done=False):
        tmp = raw if inline_done else self.sparsify(fmt.inline, raw, fmt.tmp_layout, reference, op)
        return self.sparsify(fmt.external, tmp, fmt.out_layout, reference, op)

    # -- execution ----------------------------------------------------------

    def execute(self, op_name: str, inputs, out_formats=None) -> DispatchResult:
        if not self.known_op(op_name):
            raise DispatchError(f"unknown operator {op_name!r}")
        inputs = tuple(inputs)
        layouts = tuple(layout_of(x) for x in inputs)
        out_formats = tuple(out_formats) if out_formats is not None else (DENSE_OUTPUT,)
        before = len(self.warnings)

        def finish(outcome, raw, inline_done, conversions=()):
            raw = raw if isinstance(raw, tuple) else (raw,)
            if len(raw) != len(out_formats):
                raise DispatchError(f"{op_name} produced {len(raw)} outputs, "
                                    f"{len(out_formats)} formats given")
            outs = tuple(self.apply_output_format(f, r, op=op_name, inline_done=inline_done)
                         for f, r in zip(out_formats, raw))
            return DispatchResult(outcome, outs, self.warnings[before:], conversions)

        if op_name not in self.force_dense:
            impl, generic = self.lookup(op_name, layouts, out_formats)
            if impl is not None:
                return finish("exact", impl(inputs, out_formats), not generic)
            if all(l.kind == "dense" for l in layouts) and op_name in self._dense_ops:
                # dense inputs are the dense operator's native layout
                return finish("exact", self._dense_ops[op_name](*inputs), False)
            for plan in _conversion_plans(layouts):
                impl, generic = self.lookup(op_name, plan, out_formats)
                if impl is None:
                    continue
                converted = tuple(convert_lossless(x, t) for x, t in zip(inputs, plan))
                path = tuple((i, str(s), str(t)) for i, (s, t) in enumerate(zip(layouts, plan))
                             if s != t)
                return finish("via_conversion", impl(converted, out_formats), not generic, path)
        dense_fn = self._dense_ops.get(op_name)
        if dense_fn is None:
            raise DispatchError(f"no implementation and no dense route for {op_name} on "
                                f"{[str(l) for l in layouts]}")
        self._warn(op_name, layouts, "dense_fallback",
                   f"{op_name}{tuple(str(l) for l in layouts)}: no sparse implementation, "
                   f"falling back to masked dense")
        dense_inputs = [to_dense(x) for x in inputs]
        return finish("dense_fallback", dense_fn(*dense_inputs), False)

    def dump(self) -> str:
        """Human-readable listing of registered implementations."""
        lines = []
        for label, table in (("fwd", self._fwd), ("bwd", self._bwd)):
            for key, impl in table.items():
                outs = "any" if key.output_formats is None else [str(f) for f in key.output_formats]
                lines.append(f"{label} {key.op_name}{tuple(str(l) for l in key.input_layouts)}"
                             f" -> {outs}: {getattr(impl, '__name__', impl)}")
        for (kind, i, o), impl in self._sparsifiers.items():
            lines.append(f"sparsifier {kind} {i} -> {o}: {getattr(impl, '__name__', impl)}")
        return "\n".join(lines)


def _kind(layout) -> str:
    if isinstance(layout, LayoutTag):
        return layout.kind
    return str(layout)


def _conversion_plans(layouts):
    """Target layout tuples, fewest conversions first, deterministic order."""
    options = [[(l, 0)] + [(LayoutTag(k), 1) for k in LOSSLESS[l.kind]] for l in layouts]
    plans = sorted(itertools.product(*options), key=lambda p: sum(c for _, c in p))
    for plan in plans:
        # an all-dense plan is the dense fallback, not a conversion
        if any(c for _, c in plan) and not all(l.kind == "dense" for l, _ in plan):
            yield tuple(l for l, _ in plan)


# ---------------------------------------------------------------------------
# built-in implementations

ANY_NMG = LayoutTag.grouped_nm()


def _add_csr(inputs, out_formats):
    a, b = inputs
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    total = a.to_dense() + b.to_dense()
    # keep-all semantics: union of the stored positions
    return CsrMatrix.from_mask(total, a.support() | b.support())


def _matmul_csr_dense(inputs, out_formats):
    return csr_spmm(inputs[0], inputs[1])


def _matmul_nmg_dense(inputs, out_formats):
    a, b = inputs
    if a.sparse_dim != 1:
        return a.to_dense() @ b
    return nmg_spmm(a, b)


def _matmul_dense_nmg(inputs, out_formats):
    x, w = inputs
    if w.sparse_dim != 0:
        return x @ w.to_dense()
    # x @ w = (w.T @ x.T).T and w.T has its sparse axis as the contraction axis
    return nmg_spmm(w.transpose(), np.ascontiguousarray(x.T)).T


def _matmul_dense_masked(inputs, out_formats):
    x, w = inputs
    return x @ w.dense


def _matmul_masked_dense(inputs, out_formats):
    w, x = inputs
    return w.dense @ x


def _linear_masked(inputs, out_formats):
    x, w, *b = inputs
    return _linear(x, w.dense, *b)


def _linear_nmg(inputs, out_formats):
    x, w, *b = inputs
    if w.sparse_dim != 1:
        y = x @ w.to_dense().T
    else:
        y = nmg_spmm(w, np.ascontiguousarray(x.T)).T
    return y if not b else y + b[0]


def _matmul_bwd(grad, inputs):
    a, b = (to_dense(x) for x in inputs)
    return grad @ b.T, a.T @ grad


def _add_bwd(grad, inputs):
    return grad, grad


def _relu_bwd(grad, inputs):
    return (grad * (to_dense(inputs[0]) > 0),)


def _mse_bwd(grad, inputs):
    pred, target = (to_dense(x) for x in inputs)
    d = (2.0 / pred.size) * (pred - target) * grad[0, 0]
    return d, -d


DENSE_BACKWARD = {"add": _add_bwd, "matmul": _matmul_bwd, "relu": _relu_bwd, "mse_loss": _mse_bwd}


def make_registry() -> DispatchRegistry:
    """A fresh registry with the built-in implementations."""
    r = DispatchRegistry()
    r.register_op(OperatorKey("add", (CSR, CSR)), _add_csr)
    r.register_op(OperatorKey("matmul", (CSR, DENSE)), _matmul_csr_dense)
    r.register_op(OperatorKey("matmul", (ANY_NMG, DENSE)), _matmul_nmg_dense)
    r.register_op(OperatorKey("matmul", (DENSE, MASKED)), _matmul_dense_masked)
    r.register_op(OperatorKey("matmul", (MASKED, DENSE)), _matmul_masked_dense)
    r.register_op(OperatorKey("linear", (DENSE, MASKED)), _linear_masked)
    r.register_op(OperatorKey("linear", (DENSE, MASKED, DENSE)), _linear_masked)
    r.register_op(OperatorKey("linear", (DENSE, ANY_NMG)), _linear_nmg)
    r.register_op(OperatorKey("linear", (DENSE, ANY_NMG, DENSE)), _linear_nmg)

    r.register_op(OperatorKey("matmul", (DENSE, ANY_NMG)), _matmul_dense_nmg)

    for layouts in ((DENSE, MASKED), (DENSE, ANY_NMG), (MASKED, DENSE)):
        r.register_op(OperatorKey("matmul", layouts), _matmul_bwd, backward=True)

    for kind in ("keep_all", "random_fraction", "scalar_threshold", "per_block_fraction",
                 "scalar_fraction", "blockwise_fraction", "grouped_nm", "same_format"):
        for out in ("dense", "masked", "csr", "coo"):
            r.register_sparsifier_impl(kind, "*", out, generic_sparsify)
    r.register_sparsifier_impl("grouped_nm", "*", "grouped_nm", _grouped_sparsify)
    r.register_sparsifier_impl("same_format", "*", "grouped_nm", _same_format_sparsify)
    return r


_default: Optional[DispatchRegistry] = None
_default_lock = threading.Lock()


def default_registry() -> DispatchRegistry:
    global _default
    with _default_lock:
        if _default is None:
            _default = make_registry()
        return _default


def execute(op_name: str, inputs, out_formats=None, registry: DispatchRegistry | None = None):
    return (registry or default_registry()).execute(op_name, inputs, out_formats)
