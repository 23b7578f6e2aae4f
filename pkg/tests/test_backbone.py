"""Tests for model/backbone and model/local_decoder"""
# Imports
from __future__ import annotations
import dataclasses

import numpy as np
import pytest

from tokenloom.codec.streams import FrameKind, TokenGrid, pack_sequence
from tokenloom.codec.vocab import TokenKind, Vocabulary
from tokenloom.config import ModelConfig
from tokenloom.errors import CheckpointError
from tokenloom.model.backbone import BackboneState, BlockTrace, forward_backbone, predict, ssl_targets, text_log_probs
from tokenloom.model.local_decoder import FrameContext, local_decode_frame, sample_index
from tokenloom.tensor import Array



# Fixtures
@pytest.fixture
def grid(tiny_vocab: Vocabulary, make_text, make_frames) -> TokenGrid:
    items = [make_text(1, 2), make_frames(TokenKind.REASON, 2), make_frames(TokenKind.RECON, 4, seed=1),
             make_text(3)]
    return pack_sequence(items, tiny_vocab, markers=True)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)



# Tests
def test_expert_blocks_leave_text_rows_bit_for_bit_unchanged(grid: TokenGrid, tiny_state: BackboneState) -> None:
    trace: list[BlockTrace] = []
    forward_backbone(grid, tiny_state, trace)
    text = ~grid.audio_mask[0]
    assert len(trace) == 2
    for entry in trace:
        assert entry.before[0, text].tobytes() == entry.after[0, text].tobytes()
        assert not np.array_equal(entry.before[0, ~text], entry.after[0, ~text])


@pytest.mark.parametrize('seed', range(100))
def test_expert_blocks_leave_text_rows_unchanged_for_any_parameters(seed: int, tiny_config: ModelConfig,
                                                                    make_text, make_frames) -> None:
    rng = np.random.default_rng(seed)
    d_model, n_heads = [(8, 2), (16, 2), (16, 4), (24, 2)][int(rng.integers(0, 4))]
    config = dataclasses.replace(
        tiny_config, d_model=d_model, n_heads=n_heads, n_understand=int(rng.integers(1, 3)),
        n_crossmodal=int(rng.integers(1, 3)), n_generate=int(rng.integers(1, 3)),
        init_scale=float(rng.uniform(0.01, 0.5)), seed=seed)
    state = BackboneState.initialize(config)
    grid = random_grid(state.vocab, rng, make_text, make_frames)
    trace: list[BlockTrace] = []
    forward_backbone(grid, state, trace)
    text = ~grid.audio_mask[0]
    assert len(trace) == config.n_understand + config.n_generate
    for entry in trace:
        assert entry.before[0, text].tobytes() == entry.after[0, text].tobytes()


def test_crossmodal_blocks_update_text_rows(grid: TokenGrid, tiny_state: BackboneState) -> None:
    output = forward_backbone(grid, tiny_state)
    text = ~grid.audio_mask[0]
    assert not np.array_equal(output.h_u.data[0, text], output.h_c.data[0, text])


def test_later_tokens_do_not_change_earlier_states(grid: TokenGrid, tiny_state: BackboneState,
                                                   tiny_vocab: Vocabulary) -> None:
    last_frame = int(np.flatnonzero(grid.frame_kind[0] == FrameKind.RECON)[-1])
    changed = grid.copy()
    for book in (0, 1):
        start = tiny_vocab.book_range(TokenKind.RECON, book).start
        changed.tokens[0, last_frame, book] = start + (grid.tokens[0, last_frame, book] - start + 1) % 8
    before = forward_backbone(grid, tiny_state).h_g.data
    after = forward_backbone(changed, tiny_state).h_g.data
    np.testing.assert_allclose(before[0, :last_frame], after[0, :last_frame], rtol=0, atol=1e-6)
    assert not np.allclose(before[0, last_frame], after[0, last_frame])


def test_attention_never_crosses_documents(tiny_state: BackboneState, tiny_vocab: Vocabulary, make_text,
                                           make_frames) -> None:
    first = pack_sequence([make_text(1, 2)], tiny_vocab, markers=True, doc_id=0)
    altered = pack_sequence([make_text(5, 9)], tiny_vocab, markers=True, doc_id=0)
    second = pack_sequence([make_text(4), make_frames(TokenKind.RECON, 3)], tiny_vocab, markers=True, doc_id=1)
    a = forward_backbone(TokenGrid.concatenate([first, second], tiny_vocab), tiny_state).h_g.data
    b = forward_backbone(TokenGrid.concatenate([altered, second], tiny_vocab), tiny_state).h_g.data
    np.testing.assert_allclose(a[0, first.length:], b[0, first.length:], rtol=0, atol=1e-6)


def test_sequences_longer_than_the_context_are_rejected(tiny_state: BackboneState, tiny_vocab: Vocabulary,
                                                        make_text) -> None:
    grid = pack_sequence([make_text(*([1] * 70))], tiny_vocab)
    with pytest.raises(ValueError):
        forward_backbone(grid, tiny_state)


def test_predictions_cover_every_position_with_a_predecessor(grid: TokenGrid, tiny_state: BackboneState) -> None:
    predictions = predict(grid, tiny_state)
    n_text = int(np.count_nonzero(grid.frame_kind[0, 1:] == FrameKind.TEXT))
    assert predictions.text_log_probs.shape[0] == n_text
    assert predictions.audio[FrameKind.REASON].log_probs.shape == (2, 8, 8)
    assert predictions.audio[FrameKind.RECON].log_probs.shape == (4, 8, 8)


def test_audio_distributions_are_normalized_over_their_book(grid: TokenGrid, tiny_state: BackboneState) -> None:
    log_probs = predict(grid, tiny_state).audio[FrameKind.RECON].log_probs.data
    np.testing.assert_allclose(np.exp(log_probs).sum(axis=-1), 1.0, rtol=1e-5)


def test_audio_targets_are_entry_indices(grid: TokenGrid, tiny_state: BackboneState) -> None:
    targets = predict(grid, tiny_state).audio[FrameKind.RECON].targets
    assert targets.min() >= 0 and targets.max() < 8


def test_text_head_never_predicts_pad(grid: TokenGrid, tiny_state: BackboneState, tiny_vocab: Vocabulary) -> None:
    output = forward_backbone(grid, tiny_state)
    log_probs = text_log_probs(tiny_state, output.h_g).data
    assert np.all(np.exp(log_probs[..., tiny_vocab.pad]) == 0.0)


def test_freezing_keeps_only_the_chosen_groups_trainable(tiny_state: BackboneState) -> None:
    tiny_state.set_trainable(['generate', 'local'])
    names = tiny_state.trainable_parameters()
    assert names
    assert all(name.split('.')[0] in ('generate', 'local') for name in names)


def test_unknown_groups_cannot_be_made_trainable(tiny_state: BackboneState) -> None:
    with pytest.raises(ValueError):
        tiny_state.set_trainable(['decoder'])


def test_every_parameter_belongs_to_a_group(tiny_state: BackboneState) -> None:
    grouped = tiny_state.groups()
    assert sum(len(params) for params in grouped.values()) == len(tiny_state.parameters())
    assert all(grouped[group] for group in ('understand', 'crossmodal', 'generate', 'local', 'embed', 'head'))


def test_saved_state_excludes_the_distillation_decoder(tiny_state: BackboneState) -> None:
    assert not any(name.startswith('distill.') for name in tiny_state.state_arrays())
    assert any(name.startswith('distill.') for name in tiny_state.state_arrays(include_distill=True))


def test_loading_arrays_restores_every_parameter(tiny_state: BackboneState, tiny_config: ModelConfig) -> None:
    other = BackboneState.initialize(dataclasses.replace(tiny_config, seed=7))
    other.load_arrays(tiny_state.state_arrays())
    for name, array in tiny_state.state_arrays().items():
        assert other.parameters()[name].data.tobytes() == array.tobytes()


def test_loading_mismatched_arrays_names_the_group(tiny_state: BackboneState) -> None:
    arrays = tiny_state.state_arrays()
    arrays['head.text.weight'] = arrays['head.text.weight'][:, :3]
    with pytest.raises(CheckpointError, match='head'):
        tiny_state.load_arrays(arrays)


def test_clones_do_not_share_parameter_buffers(tiny_state: BackboneState) -> None:
    clone = tiny_state.clone()
    clone.parameters()['head.text.weight'].data += 1.0
    assert not np.array_equal(clone.parameters()['head.text.weight'].data,
                              tiny_state.parameters()['head.text.weight'].data)


def test_layer_counts_below_one_are_rejected(tiny_config: ModelConfig) -> None:
    with pytest.raises(ValueError):
        BackboneState.initialize(dataclasses.replace(tiny_config, n_generate=0))


def test_ssl_targets_are_zero_off_audio_and_deterministic(grid: TokenGrid, tiny_vocab: Vocabulary) -> None:
    z = ssl_targets(grid, tiny_vocab, 4)
    assert np.all(z[0, ~grid.audio_mask[0]] == 0.0)
    assert np.all(np.abs(z[0, grid.audio_mask[0]]).sum(axis=-1) > 0)
    np.testing.assert_array_equal(z, ssl_targets(grid, tiny_vocab, 4))


def test_local_decoder_steps_only_see_earlier_books(tiny_state: BackboneState, tiny_vocab: Vocabulary,
                                                    make_frames, rng: np.random.Generator) -> None:
    h = Array(rng.normal(size=(1, 16)))
    frame = make_frames(TokenKind.RECON, 1).tokens
    changed = frame.copy()
    start = tiny_vocab.book_range(TokenKind.RECON, 3).start
    changed[0, 3] = start + (frame[0, 3] - start + 1) % 8
    a = tiny_state.local.log_probs(h, frame, TokenKind.RECON).data
    b = tiny_state.local.log_probs(h, changed, TokenKind.RECON).data
    np.testing.assert_allclose(a[0, :4], b[0, :4], rtol=0, atol=1e-6)
    assert not np.allclose(a[0, 4:], b[0, 4:])


def test_sampled_frames_stay_inside_their_books(tiny_state: BackboneState, tiny_vocab: Vocabulary,
                                                rng: np.random.Generator) -> None:
    tokens, log_probs = tiny_state.local.sample(Array(rng.normal(size=(3, 16))), TokenKind.REASON, 1.0, rng)
    for book in range(8):
        ids = tiny_vocab.book_range(TokenKind.REASON, book)
        assert np.all((tokens[:, book] >= ids.start) & (tokens[:, book] < ids.stop))
    assert np.all(log_probs <= 0.0)


def test_sampling_mask_restricts_every_book(tiny_state: BackboneState, tiny_vocab: Vocabulary,
                                            rng: np.random.Generator) -> None:
    allowed = np.zeros((8, 8), dtype=bool)
    allowed[:, 2] = True
    tokens, _ = tiny_state.local.sample(Array(rng.normal(size=(1, 16))), TokenKind.RECON, 1.0, rng, allowed=allowed)
    np.testing.assert_array_equal(tokens[0] - tiny_state.local.book_offsets(TokenKind.RECON), np.full(8, 2))


def test_greedy_sampling_breaks_ties_toward_the_lowest_index(rng: np.random.Generator) -> None:
    assert sample_index(np.array([0.0, 3.0, 3.0, 1.0]), 0.0, rng) == 1


def test_top_one_sampling_is_the_arg_max(rng: np.random.Generator) -> None:
    assert all(sample_index(np.array([0.5, 0.1, 2.0]), 1.0, rng, top_k=1) == 2 for _ in range(10))


def test_sampling_with_nothing_allowed_is_rejected(rng: np.random.Generator) -> None:
    with pytest.raises(ValueError):
        sample_index(np.zeros(3), 1.0, rng, allowed=np.zeros(3, dtype=bool))


def test_teacher_forced_frame_decoding_returns_one_row_per_book(tiny_state: BackboneState, make_frames,
                                                                rng: np.random.Generator) -> None:
    ctx = FrameContext(Array(rng.normal(size=16)), make_frames(TokenKind.RECON, 1).tokens[0])
    rows = local_decode_frame(ctx, tiny_state.local, 'teacher')
    assert rows.shape == (8, 8)


def test_frame_decoding_rejects_overlong_prefixes_and_unknown_modes(tiny_state: BackboneState,
                                                                    rng: np.random.Generator) -> None:
    h = Array(rng.normal(size=16))
    with pytest.raises(ValueError):
        local_decode_frame(FrameContext(h, np.zeros(9, dtype=np.int64)), tiny_state.local, 'sample')
    with pytest.raises(ValueError):
        local_decode_frame(FrameContext(h), tiny_state.local, 'beam')


def test_frame_decoding_completes_a_prefix(tiny_state: BackboneState, make_frames,
                                           rng: np.random.Generator) -> None:
    prefix = make_frames(TokenKind.RECON, 1).tokens[0, :3]
    frame = local_decode_frame(FrameContext(Array(rng.normal(size=16)), prefix), tiny_state.local, 'sample', rng=rng)
    np.testing.assert_array_equal(frame[:3], prefix)
    assert frame.shape == (8,)



# Helpers
def random_grid(vocab: Vocabulary, rng: np.random.Generator, make_text, make_frames) -> TokenGrid:
    """A marked document alternating text and audio items of random lengths, starting with either."""
    items = []
    audio_first = bool(rng.integers(0, 2))
    for i in range(int(rng.integers(2, 5))):
        if (i % 2 == 0) == audio_first:
            kind = TokenKind.REASON if rng.random() < 0.5 else TokenKind.RECON
            items.append(make_frames(kind, int(rng.integers(1, 6)), seed=int(rng.integers(0, 2**31))))
        else:
            items.append(make_text(*rng.integers(0, vocab.n_text, size=int(rng.integers(1, 5))).tolist()))
    return pack_sequence(items, vocab, markers=True)
