"""Shared fixtures: a tiny model every test can afford to run."""
# Imports
from __future__ import annotations

import numpy as np
import pytest

from tokenloom.codec.streams import Item
from tokenloom.codec.vocab import TokenKind, Vocabulary
from tokenloom.config import ModelConfig
from tokenloom.model.backbone import BackboneState



# Fixtures
@pytest.fixture
def tiny_config() -> ModelConfig:
    return ModelConfig(n_text=16, n_reason_per_book=8, n_recon_per_book=8, d_model=16, n_heads=2,
                       n_understand=1, n_crossmodal=1, n_generate=1, n_local=1, max_context=64)


@pytest.fixture
def tiny_state(tiny_config: ModelConfig) -> BackboneState:
    return BackboneState.initialize(tiny_config)


@pytest.fixture
def tiny_vocab(tiny_state: BackboneState) -> Vocabulary:
    return tiny_state.vocab


@pytest.fixture
def make_frames(tiny_vocab: Vocabulary):
    """Audio items of `n` frames with entry indices drawn from a seeded generator."""
    def make(kind: TokenKind, n: int, seed: int = 0) -> Item:
        rng = np.random.default_rng(seed)
        offsets = np.array([tiny_vocab.book_range(kind, b).start for b in range(tiny_vocab.n_books)])
        size = tiny_vocab.book_size(kind)
        return Item.audio(kind, offsets + rng.integers(0, size, size=(n, tiny_vocab.n_books)))
    return make


@pytest.fixture
def make_text(tiny_vocab: Vocabulary):
    def make(*indices: int) -> Item:
        return Item.text([tiny_vocab.text_range.start + i for i in indices])
    return make
