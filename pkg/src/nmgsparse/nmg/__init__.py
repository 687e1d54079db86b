"""Grouped n:m (n:m:g) sparsity: pattern tables, encoding and conversion."""
from .convert import (
    assignment_magnitude,
    best_nm_energy_mask,
    check_assignment,
    columnwise_magnitudes,
    encode,
    from_dense_greedy,
    greedy_assignment,
    oracle_optimal,
    refine_encoding,
    refine_exchange,
)
from .format import GroupedNMMatrix, chunk_view, pad_to_format, padded_shape
from .patterns import PatternTable, pattern_order, revolving_door

__all__ = [
    "GroupedNMMatrix",
    "PatternTable",
    "assignment_magnitude",
    "best_nm_energy_mask",
    "check_assignment",
    "chunk_view",
    "columnwise_magnitudes",
    "encode",
    "from_dense_greedy",
    "greedy_assignment",
    "oracle_optimal",
    "pad_to_format",
    "padded_shape",
    "pattern_order",
    "refine_encoding",
    "refine_exchange",
    "revolving_door",
]
