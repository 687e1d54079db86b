"""A small reverse-mode graph whose forward nodes run through dispatch."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from ..core import MASKED, ContractError, ShapeError, layout_of, to_dense
from ..dispatch import (
    DENSE_BACKWARD,
    DENSE_OUTPUT,
    DispatchRegistry,
    OutputFormat,
    default_registry,
)
from ..sparsifiers import SameFormat, apply_same_format

OPS = ("input", "parameter", "matmul", "add", "relu", "mse_loss")


class GraphStateError(RuntimeError):
    """Graph used out of order, e.g. backward before forward."""


@dataclass
class SparseParameter:
    """A trainable matrix in any layout.

    ``grad_format`` is applied to the dense gradient. ``None`` means the
    default: dense for dense values, otherwise masked by the value's own
    support (same-format gradients).
    """

    value: Any
    name: str = ""
    grad_format: Optional[OutputFormat] = None

    @property
    def layout(self):
        return layout_of(self.value)

    @property
    def shape(self):
        return tuple(self.value.shape)

    def gradient_format(self) -> OutputFormat:
        if self.grad_format is not None:
            return self.grad_format
        if isinstance(self.value, np.ndarray):
            return DENSE_OUTPUT
        return OutputFormat(external=SameFormat(), out_layout=MASKED)

    def dense(self) -> np.ndarray:
        return to_dense(self.value)


@dataclass
class Node:
    id: int
    op: str
    inputs: tuple = ()
    name: str = ""
    param: Optional[SparseParameter] = None
    value: Any = None
    grad: Optional[np.ndarray] = None


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    # bias rows broadcast over the batch, so sum their gradient back
    for axis, (gs, s) in enumerate(zip(grad.shape, shape)):
        if s == 1 and gs != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Graph:
    def __init__(self, registry: DispatchRegistry | None = None):
        self.nodes: list[Node] = []
        self.registry = registry or default_registry()
        self._forward_done = False
        self.loss_id: Optional[int] = None

    def _add(self, op, inputs=(), **kw) -> int:
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise ContractError(f"unknown node id {i}")
        node = Node(len(self.nodes), op, tuple(inputs), **kw)
        self.nodes.append(node)
        self._forward_done = False
        return node.id

    def input(self, name: str) -> int:
        return self._add("input", name=name)

    def parameter(self, param: SparseParameter) -> int:
        return self._add("parameter", name=param.name, param=param)

    def matmul(self, a: int, b: int) -> int:
        return self._add("matmul", (a, b))

    def add(self, a: int, b: int) -> int:
        return self._add("add", (a, b))

    def relu(self, a: int) -> int:
        return self._add("relu", (a,))

    def mse_loss(self, pred: int, target: int) -> int:
        nid = self._add("mse_loss", (pred, target))
        self.loss_id = nid
        return nid

    @property
    def parameters(self) -> list:
        return [n.param for n in self.nodes if n.op == "parameter"]

    def forward(self, feeds: dict, upto: int | None = None):
        """Evaluate every node (node ids are already topological).

        Returns the loss as a float when the graph has a loss node, otherwise
        the value of node ``upto`` (default: the last node).
        """
        for node in self.nodes:
            if node.op == "input":
                if node.name not in feeds:
                    raise ContractError(f"missing feed for input {node.name!r}")
                node.value = np.asarray(feeds[node.name], dtype=np.float64)
            elif node.op == "parameter":
                node.value = node.param.value
            else:
                args = [self.nodes[i].value for i in node.inputs]
                node.value = self.registry.execute(node.op, args).output
            node.grad = None
        self._forward_done = True
        if upto is not None:
            return self.nodes[upto].value
        if self.loss_id is not None:
            return float(self.nodes[self.loss_id].value[0, 0])
        return self.nodes[-1].value

    def _backward_impl(self, node: Node, args):
        layouts = tuple(layout_of(a) for a in args)
        impl, _ = self.registry.lookup(node.op, layouts, backward=True)
        if impl is not None:
            return impl
        if not all(l.kind == "dense" for l in layouts):
            self.registry._warn(node.op, layouts, "dense_fallback_backward",
                                f"{node.op}: no backward implementation for "
                                f"{[str(l) for l in layouts]}, using dense formulas")
        return DENSE_BACKWARD[node.op]

    def backward(self) -> dict:
        """Gradients of the loss for every parameter, keyed by parameter name."""
        if not self._forward_done or self.loss_id is None:
            raise GraphStateError("backward needs a completed forward pass of a loss graph")
        for node in self.nodes:
            node.grad = None
        self.nodes[self.loss_id].grad = np.ones((1, 1))
        for node in reversed(self.nodes[: self.loss_id + 1]):
            if node.grad is None or not node.inputs:
                continue
            args = [self.nodes[i].value for i in node.inputs]
            grads = self._backward_impl(node, args)(node.grad, args)
            for i, g in zip(node.inputs, grads):
                src = self.nodes[i]
                g = _unbroadcast(np.asarray(g), src.value.shape)
                if g.shape != tuple(src.value.shape):
                    raise ShapeError(f"gradient shape {g.shape} != value shape {src.value.shape}")
                src.grad = g if src.grad is None else src.grad + g
        out = {}
        for node in self.nodes:
            if node.op != "parameter":
                continue
            g = node.grad if node.grad is not None else np.zeros(node.param.shape)
            fmt = node.param.gradient_format()
            out[node.param.name] = self.registry.apply_output_format(
                fmt, g, reference=node.param.value, op="gradient")
        return out


def sgd_step(params, grads: dict, lr: float) -> list:
    """One SGD update followed by same-format re-sparsification, in place."""
    for p in params:
        g = grads.get(p.name)
        if g is None:
            continue
        if lr == 0:
            continue
        new = p.dense() - lr * to_dense(g)
        p.value = apply_same_format(p.value, new)
    return list(params)
