"""Tests for model/generation"""
# Imports
from __future__ import annotations

import numpy as np
import pytest

from tokenloom.codec.streams import FrameKind, TokenGrid, pack_sequence
from tokenloom.codec.vocab import TokenKind, Vocabulary
from tokenloom.model.backbone import BackboneState
from tokenloom.model.generation import Mode, SamplingPolicy, bos_prompt, generate, mode_after



# Fixtures
@pytest.fixture
def recon_prompt(tiny_vocab: Vocabulary, make_frames) -> TokenGrid:
    """BOS, AUDIO_BEGIN, RECON_BEGIN."""
    return pack_sequence([make_frames(TokenKind.RECON, 1)], tiny_vocab, markers=True).window(0, 3)


@pytest.fixture
def reason_prompt(tiny_vocab: Vocabulary, make_frames) -> TokenGrid:
    """BOS, AUDIO_BEGIN, REASON_BEGIN."""
    return pack_sequence([make_frames(TokenKind.REASON, 1)], tiny_vocab, markers=True).window(0, 3)



# Tests
def test_mode_follows_the_last_opening_marker(tiny_vocab: Vocabulary, make_text, make_frames) -> None:
    grid = pack_sequence([make_text(1), make_frames(TokenKind.REASON, 2)], tiny_vocab, markers=True)
    assert mode_after(grid.window(0, 4), tiny_vocab) == (Mode.REASON, 0)
    assert mode_after(grid.window(0, 6), tiny_vocab) == (Mode.REASON, 2)
    assert mode_after(grid, tiny_vocab) == (Mode.TEXT, 0)


def test_bos_prompt_is_a_single_text_position(tiny_vocab: Vocabulary) -> None:
    prompt = bos_prompt(tiny_vocab)
    prompt.validate(tiny_vocab)
    assert prompt.length == 1
    assert prompt.tokens[0, 0, tiny_vocab.text_stream] == tiny_vocab.bos


def test_generation_needs_a_prompt(tiny_state: BackboneState, tiny_vocab: Vocabulary) -> None:
    with pytest.raises(ValueError):
        generate(TokenGrid.empty(tiny_vocab, 1, 0), tiny_state, SamplingPolicy())


def test_generated_grids_keep_the_packing_invariants(tiny_state: BackboneState, tiny_vocab: Vocabulary) -> None:
    result = generate(bos_prompt(tiny_vocab), tiny_state, SamplingPolicy(max_length=12, max_frames=3))
    result.grid.validate(tiny_vocab)
    assert result.grid.length <= 12
    assert result.n_generated == result.grid.length - 1
    assert result.stopped_at_eos or result.truncated


def test_generation_is_reproducible_for_a_seed(tiny_state: BackboneState, tiny_vocab: Vocabulary) -> None:
    policy = SamplingPolicy(max_length=10, seed=3)
    a = generate(bos_prompt(tiny_vocab), tiny_state, policy).grid
    b = generate(bos_prompt(tiny_vocab), tiny_state, policy).grid
    np.testing.assert_array_equal(a.tokens, b.tokens)


def test_segments_close_at_the_frame_cap(tiny_state: BackboneState, tiny_vocab: Vocabulary,
                                         recon_prompt: TokenGrid) -> None:
    policy = SamplingPolicy(max_length=6, max_frames=2, marker_threshold=1.0)
    result = generate(recon_prompt, tiny_state, policy)
    grid = result.grid
    assert list(grid.frame_kind[0, 3:5]) == [FrameKind.RECON, FrameKind.RECON]
    assert grid.tokens[0, 5, tiny_vocab.text_stream] == tiny_vocab.audio_end
    assert result.truncated
    grid.validate(tiny_vocab)


def test_reasoning_segments_hand_over_to_reconstruction(tiny_state: BackboneState, tiny_vocab: Vocabulary,
                                                        reason_prompt: TokenGrid) -> None:
    policy = SamplingPolicy(max_length=7, max_frames=1, marker_threshold=1.0)
    grid = generate(reason_prompt, tiny_state, policy).grid
    assert grid.frame_kind[0, 3] == FrameKind.REASON
    assert grid.tokens[0, 4, tiny_vocab.text_stream] == tiny_vocab.recon_begin
    assert grid.frame_kind[0, 5] == FrameKind.RECON
    assert grid.tokens[0, 6, tiny_vocab.text_stream] == tiny_vocab.audio_end


def test_a_zero_threshold_closes_after_one_frame(tiny_state: BackboneState, tiny_vocab: Vocabulary,
                                                 recon_prompt: TokenGrid) -> None:
    policy = SamplingPolicy(max_length=5, max_frames=10, marker_threshold=0.0)
    grid = generate(recon_prompt, tiny_state, policy).grid
    assert grid.frame_kind[0, 3] == FrameKind.RECON
    assert grid.tokens[0, 4, tiny_vocab.text_stream] == tiny_vocab.audio_end


def test_reaching_the_length_cap_flags_truncation(tiny_state: BackboneState, recon_prompt: TokenGrid) -> None:
    policy = SamplingPolicy(max_length=6, max_frames=100, marker_threshold=1.0)
    result = generate(recon_prompt, tiny_state, policy)
    assert result.truncated
    assert not result.stopped_at_eos
    assert result.grid.length == 6
    assert np.all(result.grid.frame_kind[0, 3:] == FrameKind.RECON)


def test_frames_of_one_segment_share_an_item(tiny_state: BackboneState, recon_prompt: TokenGrid) -> None:
    policy = SamplingPolicy(max_length=6, max_frames=100, marker_threshold=1.0)
    grid = generate(recon_prompt, tiny_state, policy).grid
    assert len(set(grid.item_ids[0, 3:])) == 1
    assert grid.item_ids[0, 3] >= 0
