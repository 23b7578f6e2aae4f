"""Training losses over teacher-forced predictions.

Specification:
    L_text  = mean over predicted text positions of −log p(x_t)
    L_audio = mean over predicted audio frames of Σ_ℓ w_ℓ · (−log p(x_{t,ℓ}))
    L       = λ_text · L_text + λ_audio · L_audio
    Stage 1 adds λ_rec · mean ‖D(h) − z_SSL‖² over reconstruction frames, where
    D is the auxiliary distillation decoder reading understanding-expert states.

    Losses are per-modality means. PAD positions are excluded by gathering the
    selected rows before any reduction, so padding never changes a value.

Classes:
    StreamWeights: The eight per-codebook loss weights.
    LossBreakdown: Every loss component of one batch.

Functions:
    text_loss: Mean text negative log-likelihood.
    audio_frame_loss: Mean stream-weighted frame negative log-likelihood.
    total_loss: The λ-weighted combination.
    distill_mse: Mean squared error against the SSL targets.
    stage1_distill_loss: Language-model loss plus weighted distillation.
    compute_losses: All components for a TokenGrid.
"""
# Imports
from __future__ import annotations
from collections.abc import Sequence
from dataclasses import dataclass, field
import logging

import numpy as np

from tokenloom.codec.streams import FrameKind, TokenGrid
from tokenloom.config import DEFAULT_STREAM_WEIGHTS
from tokenloom.errors import ShapeError
from tokenloom.model.backbone import BackboneState, predict, ssl_targets
from tokenloom.tensor import Array, as_array, current_dtype, functional as F


# Consts
LAMBDA_TEXT = 1.6
LAMBDA_AUDIO = 1.0
_logger = logging.getLogger(__name__)


# Classes
@dataclass(frozen=True)
class StreamWeights:
    w: tuple[float, ...] = DEFAULT_STREAM_WEIGHTS

    def __post_init__(self):
        if any(value < 0 for value in self.w):
            raise ValueError(f"Stream weights must be nonnegative, got {self.w}.")

    @classmethod
    def uniform(cls, n_books: int = 8) -> StreamWeights:
        return cls(tuple(1.0 / n_books for _ in range(n_books)))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.w, dtype=np.float64)


@dataclass(eq=False)
class LossBreakdown:
    """Loss components of one batch.

    Attributes:
        l_text, l_audio, l_total: Differentiable scalars.
        per_stream: Weighted per-codebook components of l_audio.
        nll_per_stream: Unweighted mean NLL per codebook.
        l_distill: Distillation MSE, when requested.
        n_text, n_audio: Predicted positions per modality.
    """
    l_text: Array
    l_audio: Array
    l_total: Array
    per_stream: np.ndarray
    nll_per_stream: np.ndarray
    l_distill: Array | None = None
    n_text: int = 0
    n_audio: int = 0
    text_empty: bool = field(default=False)

    @property
    def objective(self) -> Array:
        """The scalar to differentiate: l_total, plus the distillation term when present."""
        return self.l_total if self.l_distill is None else F.add(self.l_total, self.l_distill)


# Functions
def text_loss(log_probs: Array, targets: np.ndarray, valid: np.ndarray | None = None) -> tuple[Array, int]:
    """Mean NLL of `targets` under N × V `log_probs`, over rows where `valid` is set.

    Returns:
        The loss and the number of counted positions; an empty set gives 0 and count 0.
    """
    targets = np.asarray(targets, dtype=np.int64)
    n = targets.shape[0]
    if log_probs.shape[0] != n:
        raise ShapeError(f"Log-probs {log_probs.shape} do not match {n} targets.")
    valid = np.ones(n, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    return F.masked_mean(F.scale(F.pick(log_probs, targets), -1.0), valid)


def audio_frame_loss(
        log_probs: Array,
        targets: np.ndarray,
        weights: StreamWeights | Sequence[float] = StreamWeights(),
        valid: np.ndarray | None = None,
        ) -> tuple[Array, int]:
    """Mean over frames of Σ_ℓ w_ℓ · NLL_ℓ.

    Parameters:
        log_probs: N × K × book-size log-probabilities.
        targets: N × K entry indices.
        weights: K nonnegative weights.
        valid: Optional N mask of frames to count.

    Raises:
        ValueError: If the weight count differs from K.
    """
    w = weights.as_array() if isinstance(weights, StreamWeights) else np.asarray(weights, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    n, k = targets.shape
    if w.shape != (k,):
        raise ValueError(f"Expected {k} stream weights, got {w.size}.")
    if log_probs.shape[:2] != (n, k):
        raise ShapeError(f"Log-probs {log_probs.shape} do not match targets {targets.shape}.")
    nll = F.scale(F.pick(log_probs, targets), -1.0)
    per_frame = F.sum_(F.mul(nll, F.constant(w.astype(current_dtype()))), axis=-1)
    valid = np.ones(n, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    return F.masked_mean(per_frame, valid)


def total_loss(l_text: Array | float, l_audio: Array | float,
               lambda_text: float = LAMBDA_TEXT, lambda_audio: float = LAMBDA_AUDIO) -> Array:
    """λ_text · l_text + λ_audio · l_audio.

    Raises:
        ValueError: For a negative λ.
    """
    if lambda_text < 0 or lambda_audio < 0:
        raise ValueError(f"Loss weights must be nonnegative, got {lambda_text} and {lambda_audio}.")
    return F.add(F.scale(as_array(l_text), lambda_text), F.scale(as_array(l_audio), lambda_audio))


def distill_mse(decoded: Array, z_ssl: np.ndarray) -> Array:
    """Mean over elements of (D(h) − z_SSL)².

    Raises:
        ShapeError: If the shapes differ.
    """
    z_ssl = np.asarray(z_ssl)
    if decoded.shape != z_ssl.shape:
        raise ShapeError(f"Decoder output {decoded.shape} does not match targets {z_ssl.shape}.")
    if z_ssl.size == 0:
        return F.scale(F.sum_(decoded), 0.0)
    return F.scale(F.sum_of_squares(F.sub(decoded, F.constant(z_ssl))), 1.0 / z_ssl.size)


def stage1_distill_loss(decoded: Array, z_ssl: np.ndarray, l_lm: Array | float, lambda_rec: float = 1.0) -> Array:
    """L_LM + λ_rec · MSE(D(h), z_SSL)."""
    if lambda_rec < 0:
        raise ValueError(f"lambda_rec must be nonnegative, got {lambda_rec}.")
    return F.add(as_array(l_lm), F.scale(distill_mse(decoded, z_ssl), lambda_rec))


def compute_losses(
        grid: TokenGrid,
        state: BackboneState,
        weights: StreamWeights = StreamWeights(),
        lambda_text: float = LAMBDA_TEXT,
        lambda_audio: float = LAMBDA_AUDIO,
        distill: bool = False,
        lambda_rec: float = 1.0,
        ) -> LossBreakdown:
    """Every loss component of a batch under teacher forcing.

    Frames of both audio kinds pool into one mean. With `distill` set, the
    distillation decoder reads the understanding-expert states at
    reconstruction frames and the weighted MSE becomes `l_distill`.
    """
    predictions = predict(grid, state)
    l_text, n_text = text_loss(predictions.text_log_probs, predictions.text_targets)
    if n_text == 0:
        _logger.debug("Batch has no predicted text positions.")

    k = state.vocab.n_books
    w = weights.as_array()
    frame_terms: list[Array] = []
    nll_sums = np.zeros(k)
    n_audio = 0
    for kind, audio in predictions.audio.items():
        loss, count = audio_frame_loss(audio.log_probs, audio.targets, weights)
        frame_terms.append(F.scale(loss, float(count)))
        n_audio += count
        nll = -np.take_along_axis(audio.log_probs.data, audio.targets[..., None], axis=-1)[..., 0]
        nll_sums += nll.astype(np.float64).sum(axis=0)
    if n_audio:
        l_audio = frame_terms[0]
        for term in frame_terms[1:]:
            l_audio = F.add(l_audio, term)
        l_audio = F.scale(l_audio, 1.0 / n_audio)
        nll_per_stream = nll_sums / n_audio
    else:
        l_audio = F.scale(l_text, 0.0)
        nll_per_stream = np.zeros(k)

    l_distill = None
    if distill:
        at = np.argwhere(grid.frame_kind == FrameKind.RECON)
        b, t, d = predictions.output.h_u.shape
        rows = F.select_rows(F.reshape(predictions.output.h_u, (b * t, d)), at[:, 0] * t + at[:, 1])
        z = ssl_targets(grid, state.vocab, state.distill.out.weight.shape[1])[at[:, 0], at[:, 1]]
        l_distill = F.scale(distill_mse(state.distill(rows), z), lambda_rec)

    return LossBreakdown(
        l_text=l_text,
        l_audio=l_audio,
        l_total=total_loss(l_text, l_audio, lambda_text, lambda_audio),
        per_stream=w * nll_per_stream,
        nll_per_stream=nll_per_stream,
        l_distill=l_distill,
        n_text=n_text,
        n_audio=n_audio,
        text_empty=n_text == 0,
    )
