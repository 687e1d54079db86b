"""Central finite-difference check of graph gradients."""
from __future__ import annotations

import numpy as np

from ..core import MaskedMatrix, to_dense
from .model import MLP


def _set_entry(p, idx, v):
    if isinstance(p.value, MaskedMatrix):
        d = p.value.dense.copy()
        d[idx] = v
        p.value = MaskedMatrix(d, p.value.mask)
    else:
        p.value = p.value.copy()
        p.value[idx] = v


def finite_difference_errors(model: MLP, x, y, h: float = 1e-5) -> dict:
    """Relative error between backprop and central differences, per parameter.

    The error of a parameter is ``|g - fd| / max(|g|, |fd|)`` in the
    Frobenius norm over its trainable entries (the mask, if any); an all-zero
    pair counts as exact.
    """
    model.graph.forward({"x": x, "y": y})
    grads = model.graph.backward()
    out = {}
    for p in model.parameters:
        g = to_dense(grads[p.name])
        base = p.value
        trainable = base.mask if isinstance(base, MaskedMatrix) else np.ones(p.shape, bool)
        fd = np.zeros(p.shape)
        for idx in zip(*np.nonzero(trainable)):
            v = to_dense(base)[idx]
            _set_entry(p, idx, v + h)
            plus = model.graph.forward({"x": x, "y": y})
            p.value = base
            _set_entry(p, idx, v - h)
            minus = model.graph.forward({"x": x, "y": y})
            p.value = base
            fd[idx] = (plus - minus) / (2 * h)
        num = np.linalg.norm((g - fd)[trainable])
        den = max(np.linalg.norm(g[trainable]), np.linalg.norm(fd[trainable]))
        out[p.name] = 0.0 if den == 0 else float(num / den)
    model.graph.forward({"x": x, "y": y})
    return out
