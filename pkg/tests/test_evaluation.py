"""Tests for training/evaluation"""
# Imports
from __future__ import annotations
import math

import numpy as np
import pytest

from tokenloom.codec.vocab import TokenKind, Vocabulary
from tokenloom.config import ModelConfig, TrainConfig
from tokenloom.forge.corpus import CorpusRecord, SyntheticCorpusSpec, make_record, record_items, synth_corpus
from tokenloom.model.backbone import BackboneState
from tokenloom.tensor import precision
from tokenloom.training.batching import record_grid
from tokenloom.training.evaluation import collect_predictions, eval_accuracy, eval_ppl_per_codebook
from tokenloom.training.objectives import compute_losses
from tokenloom.training.stages import run_stage, stage_spec



# Fixtures
@pytest.fixture
def records(tiny_vocab: Vocabulary) -> list[CorpusRecord]:
    return synth_corpus(SyntheticCorpusSpec(n_records=3, alphabet=4, n_context=2), tiny_vocab)



# Tests
def test_perplexity_report_has_one_value_per_codebook(tiny_state: BackboneState,
                                                      records: list[CorpusRecord]) -> None:
    report = eval_ppl_per_codebook(tiny_state, records)
    assert len(report.book_ppl) == 8
    assert all(1.0 < ppl < math.inf for ppl in report.book_ppl)
    assert report.average_ppl == pytest.approx(float(np.mean(report.book_ppl)))
    assert report.n_records == 3
    assert report.n_frames == sum(record_items(r)[2].n_positions for r in records)


def test_untrained_perplexity_is_near_the_book_size(tiny_state: BackboneState, records: list[CorpusRecord]) -> None:
    report = eval_ppl_per_codebook(tiny_state, records)
    assert all(4.0 < ppl < 16.0 for ppl in report.book_ppl)


def test_report_serializes_to_a_plain_dictionary(tiny_state: BackboneState, records: list[CorpusRecord]) -> None:
    report = eval_ppl_per_codebook(tiny_state, records).to_dict()
    assert report['condition_mode'] == 'with-reasoning'
    assert {'book_ppl', 'average_ppl', 'accuracy', 'text_ppl', 'n_frames'} <= set(report)


def test_accuracy_is_a_fraction_per_codebook(tiny_state: BackboneState, records: list[CorpusRecord]) -> None:
    accuracy = eval_accuracy(tiny_state, records)
    assert len(accuracy) == 8
    assert all(0.0 <= a <= 1.0 for a in accuracy)


def test_accuracy_matches_the_collected_arg_max_hits(tiny_state: BackboneState,
                                                     records: list[CorpusRecord]) -> None:
    collected = collect_predictions(tiny_state, records)
    np.testing.assert_allclose(eval_accuracy(tiny_state, records), collected.correct.mean(axis=0))


def test_conditioning_on_reasoning_changes_the_predictions(tiny_state: BackboneState,
                                                           records: list[CorpusRecord]) -> None:
    with_reasoning = eval_ppl_per_codebook(tiny_state, records, 'with-reasoning')
    without = eval_ppl_per_codebook(tiny_state, records, 'without-reasoning')
    assert with_reasoning.n_frames == without.n_frames
    assert with_reasoning.book_ppl != without.book_ppl


def test_empty_corpora_give_zero_accuracy_and_no_perplexity(tiny_state: BackboneState) -> None:
    assert eval_accuracy(tiny_state, []) == [0.0] * 8
    with pytest.raises(ValueError):
        eval_ppl_per_codebook(tiny_state, [])


def test_corpora_without_reconstruction_frames_report_nan(tiny_state: BackboneState, make_text,
                                                          make_frames) -> None:
    record = make_record('r', [make_text(1, 2), make_frames(TokenKind.REASON, 2)])
    report = eval_ppl_per_codebook(tiny_state, [record])
    assert report.n_frames == 0
    assert all(math.isnan(ppl) for ppl in report.book_ppl)


def test_perplexity_is_the_exponential_of_the_training_loss_nll(tiny_config: ModelConfig,
                                                                records: list[CorpusRecord]) -> None:
    with precision('float64'):
        state = BackboneState.initialize(tiny_config)
        report = eval_ppl_per_codebook(state, records, 'without-reasoning')
        nll_sums, n_frames = np.zeros(8), 0
        for record in records:
            losses = compute_losses(record_grid(record, state.vocab, 'without-reasoning'), state)
            nll_sums += losses.nll_per_stream * losses.n_audio
            n_frames += losses.n_audio
    assert n_frames == report.n_frames
    np.testing.assert_allclose(report.book_ppl, np.exp(nll_sums / n_frames), rtol=1e-9, atol=0)


@pytest.mark.slow
def test_reasoning_prefix_lowers_reconstruction_perplexity_after_joint_training() -> None:
    config = ModelConfig(n_text=16, n_reason_per_book=64, n_recon_per_book=64, d_model=32, n_heads=4,
                         n_understand=1, n_crossmodal=1, n_generate=1, n_local=1, max_context=128)
    state = BackboneState.initialize(config)
    records = synth_corpus(SyntheticCorpusSpec(n_records=32, strength=0.9, alphabet=8, n_context=4,
                                               min_duration_s=0.4, max_duration_s=0.8), state.vocab)
    train = TrainConfig(steps=500, lr=5e-3, warmup=20, batch_size=4)
    run_stage(stage_spec(3, train), state, records, train)
    with_reasoning = eval_ppl_per_codebook(state, records, 'with-reasoning')
    without = eval_ppl_per_codebook(state, records, 'without-reasoning')
    assert with_reasoning.average_ppl <= 0.9 * without.average_ppl
