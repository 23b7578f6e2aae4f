"""Query-based compression of a feature sequence into ceil(T / K_q) states.

The input frames and the first M learned queries are joined into one sequence
and run through bidirectional attention blocks; the query rows of the output
are the compressed states. Query j sits at the centre of the input segment it
summarizes for the rotary encoding.
"""
# Imports
from __future__ import annotations
import logging
import math

import numpy as np

from tokenloom.errors import ShapeError
from tokenloom.model.layers import Block, Module, Rotary, init_normal
from tokenloom.tensor import Array, current_dtype, functional as F


# Consts
INTERLEAVE_FACTOR = 5
_logger = logging.getLogger(__name__)


# Classes
class QueryCompressor(Module):
    """Learned queries plus a lightweight bidirectional attention stack.

    Attributes:
        queries: max_queries × d learnable states.
        blocks: The attention stack (4 blocks by default).
        interleave: Input frames summarized per query (K_q).
    """

    def __init__(self, name: str, d_model: int, rng: np.random.Generator, n_blocks: int = 4, n_heads: int = 2,
                 interleave: int = INTERLEAVE_FACTOR, max_queries: int = 64, init_scale: float = 0.02):
        self.d_model = d_model
        self.interleave = interleave
        self.queries = init_normal(f"{name}.queries", (max_queries, d_model), rng, 1.0)
        self.blocks = [Block(f"{name}.block{i}", d_model, n_heads, rng, init_scale) for i in range(n_blocks)]
        self.rotary = Rotary(d_model // n_heads)

    def n_queries(self, length: int) -> int:
        return math.ceil(length / self.interleave)

    def __call__(self, h: Array) -> Array:
        """Compress T × d features into M × d states, M = ceil(T / interleave)."""
        if h.ndim != 2 or h.shape[0] < 1 or h.shape[1] != self.d_model:
            raise ShapeError(f"Compressor expects T × {self.d_model} input with T ≥ 1, got {h.shape}.")
        length = h.shape[0]
        m = self.n_queries(length)
        if m > self.queries.shape[0]:
            raise ShapeError(f"{length} frames need {m} queries, only {self.queries.shape[0]} exist.")
        joined = F.concat([h, F.slice_axis(self.queries, 0, 0, m)], axis=0)
        x = F.reshape(joined, (1, length + m, self.d_model))
        centres = np.arange(m) * self.interleave + (self.interleave - 1) / 2.0
        rotary = self.rotary.at(np.concatenate([np.arange(length, dtype=np.float64), centres]))
        bias = np.zeros((1, 1, length + m, length + m), dtype=current_dtype())
        for block in self.blocks:
            x = block(x, bias, rotary)
        return F.reshape(F.slice_axis(x, 1, length, length + m), (m, self.d_model))


# Functions
def query_compress(h: Array, qc: QueryCompressor) -> Array:
    return qc(h)
