"""Sparse tensor layouts, sparsifiers and operator dispatch built around the
grouped n:m (n:m:g) format."""
from .core import (
    COO,
    CSR,
    DENSE,
    MASKED,
    CooMatrix,
    CsrMatrix,
    LayoutTag,
    MaskedMatrix,
    energy,
    layout_of,
    sparsity,
    to_dense,
)
from .nmg import GroupedNMMatrix, from_dense_greedy, pattern_order

__version__ = "0.1.0"

__all__ = [
    "COO", "CSR", "DENSE", "MASKED", "CooMatrix", "CsrMatrix", "GroupedNMMatrix", "LayoutTag",
    "MaskedMatrix", "energy", "from_dense_greedy", "layout_of", "pattern_order", "sparsity",
    "to_dense",
]
