"""The MLP used by the pruning experiments and its synthetic regression task."""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from ..core import MaskedMatrix, to_dense
from ..dispatch import DispatchRegistry
from .graph import Graph, SparseParameter


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return self.x.shape[0]

    def split(self, n_first: int) -> tuple:
        return (Dataset(self.x[:n_first], self.y[:n_first]),
                Dataset(self.x[n_first:], self.y[n_first:]))


def teacher_task(n_samples: int = 2048, sizes=(64, 8, 1), noise: float = 0.1,
                 seed: int = 0) -> Dataset:
    """Regression targets from a random ReLU teacher network plus Gaussian noise.

    The default teacher is narrower than the default student, so the student
    is over-parameterized and has room to be pruned.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n_samples, sizes[0]))
    h = x
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
        h = h @ w
        if i < len(sizes) - 2:
            h = np.maximum(h, 0)
    y = h + noise * rng.standard_normal(h.shape)
    return Dataset(x, y)


class MLP:
    """ReLU MLP with masked weight matrices (full masks until pruned).

    Layer k computes ``h @ W_k + b_k``; every layer but the last is
    followed by a ReLU.
    """

    def __init__(self, sizes=(64, 32, 1), seed: int = 0, registry: DispatchRegistry | None = None):
        rng = np.random.default_rng(seed)
        self.sizes = tuple(sizes)
        self.weights = []
        self.biases = []
        for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
            self.weights.append(SparseParameter(MaskedMatrix(w, np.ones(w.shape, bool)), f"W{k + 1}"))
            self.biases.append(SparseParameter(np.zeros((1, fan_out)), f"b{k + 1}"))
        self.registry = registry
        self._build()

    def _build(self):
        g = Graph(self.registry)
        self.x_id = g.input("x")
        h = self.x_id
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = g.add(g.matmul(h, g.parameter(w)), g.parameter(b))
            if k < len(self.weights) - 1:
                h = g.relu(h)
        self.out_id = h
        self.y_id = g.input("y")
        g.mse_loss(h, self.y_id)
        self.graph = g

    @property
    def parameters(self) -> list:
        return self.weights + self.biases

    @property
    def layer_names(self) -> list:
        return [w.name for w in self.weights]

    def predict(self, x) -> np.ndarray:
        return self.graph.forward({"x": x, "y": np.zeros((len(x), self.sizes[-1]))},
                                  upto=self.out_id)

    def loss(self, data: Dataset) -> float:
        return self.graph.forward({"x": data.x, "y": data.y})

    def loss_and_grads(self, x, y):
        loss = self.graph.forward({"x": x, "y": y})
        return loss, self.graph.backward()

    def clone(self) -> "MLP":
        other = copy.copy(self)
        other.weights = [SparseParameter(copy.deepcopy(p.value), p.name, p.grad_format)
                         for p in self.weights]
        other.biases = [SparseParameter(p.value.copy(), p.name, p.grad_format) for p in self.biases]
        other._build()
        return other

    def weight_sparsity(self) -> dict:
        return {w.name: 1.0 - np.count_nonzero(w.value.mask) / w.value.mask.size
                if isinstance(w.value, MaskedMatrix) else
                1.0 - np.count_nonzero(to_dense(w.value)) / w.value.shape[0] / w.value.shape[1]
                for w in self.weights}
