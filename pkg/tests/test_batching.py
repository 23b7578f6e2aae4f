"""Tests for training/batching"""
# Imports
from __future__ import annotations

import numpy as np
import pytest

from tokenloom.codec.streams import FrameKind
from tokenloom.codec.vocab import TokenKind, Vocabulary
from tokenloom.forge.corpus import CorpusRecord, SyntheticCorpusSpec, make_record, synth_corpus
from tokenloom.training.batching import assemble_batches, pack_rows, record_grid



# Fixtures
@pytest.fixture
def records(tiny_vocab: Vocabulary) -> list[CorpusRecord]:
    return synth_corpus(SyntheticCorpusSpec(n_records=6, alphabet=4, n_context=2), tiny_vocab)



# Tests
def test_records_without_reasoning_lose_their_reasoning_frames(records: list[CorpusRecord],
                                                               tiny_vocab: Vocabulary) -> None:
    full = record_grid(records[0], tiny_vocab)
    bare = record_grid(records[0], tiny_vocab, 'without-reasoning')
    assert np.any(full.frame_kind == FrameKind.REASON)
    assert not np.any(bare.frame_kind == FrameKind.REASON)
    assert np.count_nonzero(bare.frame_kind == FrameKind.RECON) == np.count_nonzero(full.frame_kind == FrameKind.RECON)


def test_unknown_condition_modes_are_rejected(records: list[CorpusRecord], tiny_vocab: Vocabulary) -> None:
    with pytest.raises(ValueError):
        record_grid(records[0], tiny_vocab, 'with-captions')


def test_packed_rows_fit_the_context_and_keep_every_position(records: list[CorpusRecord],
                                                             tiny_vocab: Vocabulary) -> None:
    grids = [record_grid(r, tiny_vocab) for r in records]
    rows = pack_rows(grids, tiny_vocab, 64)
    assert all(row.length <= 64 for row in rows)
    assert sum(row.length for row in rows) == sum(g.length for g in grids)


def test_each_record_in_a_row_gets_its_own_document(records: list[CorpusRecord], tiny_vocab: Vocabulary) -> None:
    grids = [record_grid(r, tiny_vocab) for r in records]
    for row in pack_rows(grids, tiny_vocab, 64):
        ids = row.doc_ids[0]
        assert ids[0] == 0
        assert np.all(np.diff(ids) >= 0) and np.all(np.diff(ids) <= 1)


def test_records_longer_than_the_context_are_cut_and_flagged(tiny_vocab: Vocabulary, make_frames) -> None:
    record = make_record('long', [make_frames(TokenKind.RECON, 30)])
    (row,) = pack_rows([record_grid(record, tiny_vocab)], tiny_vocab, 16)
    assert row.length == 16
    assert row.truncated


def test_batches_stack_at_most_batch_size_rows(records: list[CorpusRecord], tiny_vocab: Vocabulary) -> None:
    batches = assemble_batches(records, tiny_vocab, 64, 2)
    assert all(1 <= batch.batch <= 2 for batch in batches)
    for batch in batches:
        batch.validate(tiny_vocab)


def test_batching_rejects_empty_corpora_and_bad_sizes(records: list[CorpusRecord], tiny_vocab: Vocabulary) -> None:
    with pytest.raises(ValueError):
        assemble_batches([], tiny_vocab, 64, 2)
    with pytest.raises(ValueError):
        assemble_batches(records, tiny_vocab, 64, 0)
