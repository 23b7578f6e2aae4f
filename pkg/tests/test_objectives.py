"""Tests for training/objectives"""
# Imports
from __future__ import annotations
import dataclasses
import math

import numpy as np
import pytest

from tokenloom.codec.streams import TokenGrid, pack_sequence
from tokenloom.codec.vocab import TokenKind, Vocabulary
from tokenloom.config import ModelConfig
from tokenloom.errors import ShapeError
from tokenloom.model.backbone import BackboneState
from tokenloom.tensor import Array, Tape, backward, check_gradients, precision
from tokenloom.training.objectives import (
    StreamWeights, audio_frame_loss, compute_losses, distill_mse, stage1_distill_loss, text_loss, total_loss,
)



# Fixtures
@pytest.fixture
def grid(tiny_vocab: Vocabulary, make_text, make_frames) -> TokenGrid:
    items = [make_text(1, 2, 3), make_frames(TokenKind.REASON, 2), make_frames(TokenKind.RECON, 5, seed=1)]
    return pack_sequence(items, tiny_vocab, markers=True)


@pytest.fixture
def uniform_audio() -> Array:
    return Array(np.full((3, 8, 8), -math.log(8)))



# Tests
def test_text_loss_of_a_uniform_model_is_the_log_alphabet() -> None:
    log_probs = Array(np.full((4, 4), -math.log(4)))
    loss, count = text_loss(log_probs, np.array([0, 1, 2, 3]))
    assert count == 4
    assert loss.item() == pytest.approx(math.log(4), rel=1e-6)


def test_text_loss_counts_only_valid_rows() -> None:
    log_probs = Array(np.log(np.array([[0.5, 0.5], [0.9, 0.1], [0.25, 0.75]])))
    loss, count = text_loss(log_probs, np.array([0, 1, 1]), valid=np.array([True, False, True]))
    assert count == 2
    assert loss.item() == pytest.approx((math.log(2) - math.log(0.75)) / 2, rel=1e-6)


def test_text_loss_of_no_positions_is_zero() -> None:
    loss, count = text_loss(Array(np.zeros((0, 4))), np.zeros(0, dtype=np.int64))
    assert count == 0
    assert loss.item() == 0.0


def test_audio_loss_of_a_uniform_model_is_the_log_book_size(uniform_audio: Array) -> None:
    loss, count = audio_frame_loss(uniform_audio, np.zeros((3, 8), dtype=np.int64), StreamWeights.uniform())
    assert count == 3
    assert loss.item() == pytest.approx(math.log(8), rel=1e-6)


def test_default_stream_weights_favour_the_first_three_books() -> None:
    w = StreamWeights().as_array()
    assert w.sum() == pytest.approx(1.0)
    assert np.all(w[:3] == 2 / 8) and np.all(w[3:] == 1 / 8)


def test_audio_loss_needs_one_weight_per_book(uniform_audio: Array) -> None:
    with pytest.raises(ValueError):
        audio_frame_loss(uniform_audio, np.zeros((3, 8), dtype=np.int64), [0.5, 0.5])


def test_negative_stream_weights_are_rejected() -> None:
    with pytest.raises(ValueError):
        StreamWeights((1.0, -0.1))


def test_total_loss_weights_the_two_modalities() -> None:
    assert total_loss(2.0, 3.0).item() == pytest.approx(1.6 * 2.0 + 3.0)
    assert total_loss(2.0, 3.0, 0.5, 2.0).item() == pytest.approx(7.0)


def test_total_loss_rejects_negative_weights() -> None:
    with pytest.raises(ValueError):
        total_loss(1.0, 1.0, -1.0)


def test_distill_mse_rejects_mismatched_shapes() -> None:
    with pytest.raises(ShapeError):
        distill_mse(Array(np.zeros((2, 3))), np.zeros((3, 2)))


def test_stage1_loss_adds_the_weighted_distillation_error() -> None:
    decoded = Array(np.ones((2, 2)))
    assert stage1_distill_loss(decoded, np.zeros((2, 2)), 0.5, lambda_rec=2.0).item() == pytest.approx(2.5)


def test_batch_losses_combine_with_the_lambdas(grid: TokenGrid, tiny_state: BackboneState) -> None:
    losses = compute_losses(grid, tiny_state)
    assert losses.l_total.item() == pytest.approx(1.6 * losses.l_text.item() + losses.l_audio.item(), rel=1e-5)
    assert losses.n_audio == 7
    np.testing.assert_allclose(losses.per_stream, StreamWeights().as_array() * losses.nll_per_stream)
    assert losses.l_audio.item() == pytest.approx(losses.per_stream.sum(), rel=1e-4)


def test_right_padding_does_not_change_the_losses(grid: TokenGrid, tiny_state: BackboneState,
                                                  tiny_vocab: Vocabulary, make_text) -> None:
    longer = pack_sequence([make_text(*range(12))], tiny_vocab, markers=True, doc_id=0)
    alone = compute_losses(grid, tiny_state)
    padded = compute_losses(TokenGrid.stack([grid, longer], tiny_vocab), tiny_state)
    single_longer = compute_losses(longer, tiny_state)
    n_text = alone.n_text + single_longer.n_text
    expected_text = (alone.l_text.item() * alone.n_text + single_longer.l_text.item() * single_longer.n_text) / n_text
    assert padded.n_text == n_text
    assert padded.l_text.item() == pytest.approx(expected_text, rel=1e-5)
    assert padded.l_audio.item() == pytest.approx(alone.l_audio.item(), rel=1e-5)


def test_audio_only_batches_have_zero_text_loss(tiny_state: BackboneState, tiny_vocab: Vocabulary,
                                                make_frames) -> None:
    grid = pack_sequence([make_frames(TokenKind.RECON, 4)], tiny_vocab)
    losses = compute_losses(grid, tiny_state)
    assert losses.text_empty
    assert losses.l_text.item() == 0.0
    assert losses.n_audio == 3


def test_distillation_adds_a_term_that_reaches_the_distill_decoder(grid: TokenGrid,
                                                                   tiny_state: BackboneState) -> None:
    with Tape() as tape:
        losses = compute_losses(grid, tiny_state, distill=True, lambda_rec=1.0)
    assert losses.l_distill is not None
    assert losses.objective.item() == pytest.approx(losses.l_total.item() + losses.l_distill.item(), rel=1e-6)
    grads = backward(tape, losses.objective)
    assert np.any(grads['distill.out.weight'] != 0)
    assert np.any(grads['understand.0.attn.wq'] != 0)


def test_loss_gradients_match_central_differences(grid: TokenGrid, tiny_config: ModelConfig) -> None:
    with precision('float64'):
        state = BackboneState.initialize(tiny_config)
        params = {name: state.parameters()[name] for name in
                  ('head.text.weight', 'local.head_recon', 'understand.0.attn.wq', 'crossmodal.0.ffn.w_in.weight',
                   'generate.0.attn.wv')}
        report = check_gradients(lambda: compute_losses(grid, state).l_total, params, max_entries_per_param=4)
    assert report.passed, report


@pytest.mark.slow
@pytest.mark.parametrize('seed', range(20))
def test_full_model_gradients_match_central_differences_across_configurations(seed: int, tiny_config: ModelConfig,
                                                                               tiny_vocab: Vocabulary, make_text,
                                                                               make_frames) -> None:
    rng = np.random.default_rng(seed)
    config = dataclasses.replace(tiny_config, d_model=[8, 16][seed % 2], n_understand=int(rng.integers(1, 3)),
                                 n_generate=int(rng.integers(1, 3)), init_scale=float(rng.uniform(0.02, 0.3)),
                                 seed=seed)
    first = TokenKind.REASON if seed % 3 else TokenKind.RECON
    items = [make_text(*rng.integers(0, 16, size=int(rng.integers(1, 4))).tolist()),
             make_frames(first, int(rng.integers(1, 4)), seed=seed),
             make_frames(TokenKind.RECON, int(rng.integers(2, 5)), seed=seed + 1)]
    grid = pack_sequence(items, tiny_vocab, markers=True)
    with precision('float64'):
        state = BackboneState.initialize(config)
        groups = state.groups()
        params = {}
        for group in ('understand', 'crossmodal', 'generate', 'local', 'head'):
            names = sorted(groups[group])
            name = names[int(rng.integers(0, len(names)))]
            params[name] = groups[group][name]
        report = check_gradients(lambda: compute_losses(grid, state).l_total, params, max_entries_per_param=3,
                                 rng=np.random.default_rng(seed))
    assert report.passed, report
