"""Teacher-forced evaluation: per-codebook perplexity and top-1 accuracy.

Specification:
    PPL_ℓ = exp(mean over reconstruction frames of NLL_ℓ), one value per
    codebook, and their mean as the average. Accuracy is the fraction of
    frames whose arg-max entry (lowest index on ties) equals the target.
    'with-reasoning' keeps each record's reasoning frames as a prefix;
    'without-reasoning' removes them before packing.

Classes:
    EvalReport: Perplexities, accuracies and bookkeeping of one evaluation.

Functions:
    collect_predictions: Per-frame NLL and correctness over a corpus.
    eval_ppl_per_codebook: Perplexity report.
    eval_accuracy: Per-stream top-1 accuracy.
"""
# Imports
from __future__ import annotations
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
import logging
import time
from typing import Any

import numpy as np

from tokenloom.codec.streams import FrameKind
from tokenloom.forge.corpus import CorpusRecord
from tokenloom.model.backbone import BackboneState, predict
from tokenloom.training.batching import record_grid


# Consts
_logger = logging.getLogger(__name__)


# Classes
@dataclass
class EvalReport:
    condition_mode: str
    book_ppl: list[float]
    average_ppl: float
    accuracy: list[float]
    text_ppl: float
    text_accuracy: float
    n_frames: int
    n_records: int
    wall_clock_s: float = 0.0
    entropy: dict[str, float] | None = field(default=None)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(eq=False)
class _Collected:
    nll: np.ndarray
    correct: np.ndarray
    text_nll: np.ndarray
    text_correct: np.ndarray


# Functions
def collect_predictions(
        state: BackboneState,
        records: Sequence[CorpusRecord],
        condition_mode: str = 'with-reasoning',
        kind: FrameKind = FrameKind.RECON,
        ) -> _Collected:
    """NLL and arg-max correctness of every predicted `kind` frame (N × K) and text position."""
    k = state.vocab.n_books
    nll: list[np.ndarray] = [np.zeros((0, k))]
    correct: list[np.ndarray] = [np.zeros((0, k), dtype=bool)]
    text_nll: list[np.ndarray] = [np.zeros(0)]
    text_correct: list[np.ndarray] = [np.zeros(0, dtype=bool)]
    for record in records:
        grid = record_grid(record, state.vocab, condition_mode)
        if grid.length > state.config.max_context:
            _logger.warning(f"Record {record['id']} cut from {grid.length} to {state.config.max_context} positions.")
            grid = grid.window(0, state.config.max_context)
        predictions = predict(grid, state)
        lp = predictions.text_log_probs.data.astype(np.float64)
        targets = predictions.text_targets
        text_nll.append(-lp[np.arange(len(targets)), targets])
        text_correct.append(lp.argmax(axis=-1) == targets)
        audio = predictions.audio.get(kind)
        if audio is None:
            continue
        lp = audio.log_probs.data.astype(np.float64)
        nll.append(-np.take_along_axis(lp, audio.targets[..., None], axis=-1)[..., 0])
        correct.append(lp.argmax(axis=-1) == audio.targets)
    return _Collected(np.concatenate(nll), np.concatenate(correct), np.concatenate(text_nll),
                      np.concatenate(text_correct))


def _report(state: BackboneState, records: Sequence[CorpusRecord], condition_mode: str) -> EvalReport:
    if not records:
        raise ValueError("Cannot evaluate an empty corpus.")
    start = time.perf_counter()
    collected = collect_predictions(state, records, condition_mode)
    n_frames = collected.nll.shape[0]
    if n_frames:
        book_ppl = np.exp(collected.nll.mean(axis=0)).tolist()
        accuracy = collected.correct.mean(axis=0).tolist()
    else:
        _logger.warning("Corpus has no predicted reconstruction frames.")
        book_ppl = [float('nan')] * state.vocab.n_books
        accuracy = [0.0] * state.vocab.n_books
    has_text = collected.text_nll.size > 0
    report = EvalReport(
        condition_mode=condition_mode,
        book_ppl=book_ppl,
        average_ppl=float(np.mean(book_ppl)),
        accuracy=accuracy,
        text_ppl=float(np.exp(collected.text_nll.mean())) if has_text else float('nan'),
        text_accuracy=float(collected.text_correct.mean()) if has_text else 0.0,
        n_frames=n_frames,
        n_records=len(records),
        wall_clock_s=time.perf_counter() - start,
    )
    _logger.info(f"Evaluated {len(records)} records ({condition_mode}): average PPL {report.average_ppl:.3f}")
    return report


def eval_ppl_per_codebook(state: BackboneState, records: Sequence[CorpusRecord],
                          condition_mode: str = 'with-reasoning') -> EvalReport:
    """Per-codebook perplexity over reconstruction frames.

    Raises:
        ValueError: For an empty corpus or an unknown condition mode.
    """
    return _report(state, records, condition_mode)


def eval_accuracy(state: BackboneState, records: Sequence[CorpusRecord],
                  condition_mode: str = 'with-reasoning') -> list[float]:
    """Top-1 accuracy per reconstruction codebook; an empty corpus gives zeros."""
    if not records:
        return [0.0] * state.vocab.n_books
    return _report(state, records, condition_mode).accuracy
