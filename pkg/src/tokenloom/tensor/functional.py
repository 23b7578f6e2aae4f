"""Thin callable wrappers over the registered operations.

Functions here compose `forward_op` calls; compound helpers (sub, linear,
cross entropy pieces) are built from registered kinds only, so every gradient
is certified through the op registry.
"""
# Imports
from __future__ import annotations
from collections.abc import Sequence
from typing import Any

import numpy as np

from tokenloom.tensor.ops import forward_op
from tokenloom.tensor.tape import Array, as_array


# Functions
def constant(data: Any) -> Array:
    return Array(data)


def matmul(a: Array, b: Array) -> Array:
    return forward_op('matmul', (a, b))


def add(a: Array, b: Array) -> Array:
    return forward_op('add', (a, b))


def mul(a: Array, b: Array) -> Array:
    return forward_op('mul', (a, b))


def scale(x: Array, factor: float) -> Array:
    return mul(x, as_array(factor))


def sub(a: Array, b: Array) -> Array:
    return add(a, scale(b, -1.0))


def embedding(table: Array, ids: np.ndarray) -> Array:
    return forward_op('embedding', (table,), ids=np.asarray(ids, dtype=np.int64))


def softmax(x: Array, axis: int = -1) -> Array:
    return forward_op('softmax', (x,), axis=axis)


def log_softmax(x: Array, axis: int = -1) -> Array:
    return forward_op('log_softmax', (x,), axis=axis)


def rms_normalize(x: Array, eps: float = 1e-6) -> Array:
    return forward_op('rms_normalize', (x,), eps=eps)


def gelu(x: Array) -> Array:
    return forward_op('gelu', (x,))


def masked_select_add(base: Array, update: Array, mask: np.ndarray) -> Array:
    return forward_op('masked_select_add', (base, update), mask=np.asarray(mask))


def slice_axis(x: Array, axis: int, start: int, stop: int) -> Array:
    return forward_op('slice', (x,), axis=axis, start=start, stop=stop)


def concat(xs: Sequence[Array], axis: int = -1) -> Array:
    return forward_op('concat', tuple(xs), axis=axis)


def mean(x: Array, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Array:
    return forward_op('mean', (x,), axis=axis, keepdims=keepdims)


def sum_(x: Array, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Array:
    return forward_op('sum', (x,), axis=axis, keepdims=keepdims)


def sum_of_squares(x: Array, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Array:
    return forward_op('sum_of_squares', (x,), axis=axis, keepdims=keepdims)


def reshape(x: Array, shape: Sequence[int]) -> Array:
    return forward_op('reshape', (x,), shape=tuple(shape))


def transpose(x: Array, axes: Sequence[int]) -> Array:
    return forward_op('transpose', (x,), axes=tuple(axes))


def exp(x: Array) -> Array:
    return forward_op('exp', (x,))


def pick(x: Array, index: np.ndarray) -> Array:
    return forward_op('pick', (x,), index=np.asarray(index, dtype=np.int64))


def linear(x: Array, weight: Array, bias: Array | None = None) -> Array:
    """x @ weight (+ bias) with weight stored as in_features × out_features."""
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def select_rows(x: Array, rows: np.ndarray) -> Array:
    """Rows of a 2-d array, gathered in the given order."""
    return embedding(x, rows)


def masked_mean(values: Array, mask: np.ndarray) -> tuple[Array, int]:
    """Mean of `values` over positions where `mask` is set, and the count.

    Selected entries are gathered before reduction, so unselected positions
    never touch the arithmetic. An empty selection yields a graph-connected zero.
    """
    flat_mask = np.asarray(mask, dtype=bool).reshape(-1)
    rows = np.flatnonzero(flat_mask)
    flat = reshape(values, (flat_mask.size, 1))
    if rows.size == 0:
        return scale(sum_(flat), 0.0), 0
    return mean(select_rows(flat, rows)), int(rows.size)
