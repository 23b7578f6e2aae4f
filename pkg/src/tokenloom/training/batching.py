"""Packing corpus records into fixed-context training batches.

Records become single-row grids (with markers), are packed greedily into rows
of at most `context` positions, each record keeping its own document id so
attention never crosses a record boundary. A record longer than the context is
cut to fit and flagged truncated.

Functions:
    record_grid: One record as a single-row grid.
    pack_rows: Greedily pack single-row grids into rows.
    assemble_batches: Records to stacked batches.
"""
# Imports
from __future__ import annotations
from collections.abc import Sequence
import logging

from tokenloom.codec.streams import TokenGrid, pack_sequence
from tokenloom.codec.vocab import TokenKind, Vocabulary
from tokenloom.forge.corpus import CorpusRecord, record_items


# Consts
CONDITION_MODES = ('with-reasoning', 'without-reasoning')
_logger = logging.getLogger(__name__)


# Functions
def record_grid(record: CorpusRecord, vocab: Vocabulary, condition_mode: str = 'with-reasoning',
                doc_id: int = 0, markers: bool = True) -> TokenGrid:
    """Pack a record; 'without-reasoning' drops its reasoning items."""
    if condition_mode not in CONDITION_MODES:
        raise ValueError(f"Unknown condition mode {condition_mode!r}, expected one of {CONDITION_MODES}.")
    items = record_items(record)
    if condition_mode == 'without-reasoning':
        items = [item for item in items if item.kind != TokenKind.REASON]
    return pack_sequence(items, vocab, markers=markers, doc_id=doc_id)


def pack_rows(grids: Sequence[TokenGrid], vocab: Vocabulary, context: int) -> list[TokenGrid]:
    rows: list[TokenGrid] = []
    current: list[TokenGrid] = []
    used = 0
    for grid in grids:
        if grid.length > context:
            _logger.warning(f"Record of {grid.length} positions cut to the context of {context}.")
            grid = grid.window(0, context)
            grid.truncated = True
        if current and used + grid.length > context:
            rows.append(TokenGrid.concatenate(current, vocab))
            current, used = [], 0
        grid = grid.copy()
        grid.doc_ids[grid.doc_ids >= 0] = len(current)
        current.append(grid)
        used += grid.length
    if current:
        rows.append(TokenGrid.concatenate(current, vocab))
    return rows


def assemble_batches(
        records: Sequence[CorpusRecord],
        vocab: Vocabulary,
        context: int,
        batch_size: int,
        condition_mode: str = 'with-reasoning',
        ) -> list[TokenGrid]:
    """Batches of up to `batch_size` packed rows, right-padded to their longest row.

    Raises:
        ValueError: For no records or a non-positive batch size.
    """
    if not records:
        raise ValueError("Cannot assemble batches from an empty corpus.")
    if batch_size < 1:
        raise ValueError(f"Batch size must be positive, got {batch_size}.")
    rows = pack_rows([record_grid(r, vocab, condition_mode) for r in records], vocab, context)
    batches = [TokenGrid.stack(rows[i:i + batch_size], vocab) for i in range(0, len(rows), batch_size)]
    _logger.debug(f"Packed {len(records)} records into {len(rows)} rows and {len(batches)} batches.")
    return batches
