"""Autoregressive generation over the multi-stream grid.

Specification:
    The sampler is a three-mode state machine driven by markers in the text
    stream:
        TEXT   --REASON_BEGIN-->  REASON  --RECON_BEGIN-->  RECON  --AUDIO_END-->  TEXT
    (RECON_BEGIN from TEXT enters RECON directly.) In TEXT mode the text head
    samples the next token. In an audio mode the text head first decides
    whether to close the segment: the closing marker is emitted when its
    probability exceeds the policy's marker threshold or the segment holds the
    maximum frame count; otherwise the local decoder samples the next frame.
    Generation stops at EOS or at the length cap, which flags truncation.

Classes:
    Mode: Sampler state.
    SamplingPolicy: Temperature, top-k, caps and the marker threshold.
    GenerationResult: The extended grid and how generation ended.

Functions:
    bos_prompt: A one-position prompt holding BOS.
    mode_after: The sampler mode implied by a grid's markers.
    generate: Extend a prompt.
"""
# Imports
from __future__ import annotations
from dataclasses import dataclass
from enum import Enum, auto
import logging

import numpy as np

from tokenloom.codec.streams import FrameKind, TokenGrid
from tokenloom.codec.vocab import TokenKind, Vocabulary
from tokenloom.model.backbone import BackboneState, forward_backbone, text_log_probs
from tokenloom.model.local_decoder import sample_index
from tokenloom.tensor import functional as F


# Consts
_logger = logging.getLogger(__name__)


# Classes
class Mode(Enum):
    TEXT = auto()
    REASON = auto()
    RECON = auto()


@dataclass(frozen=True)
class SamplingPolicy:
    temperature: float = 1.0
    top_k: int | None = None
    max_length: int = 128
    max_frames: int = 32
    marker_threshold: float = 0.5
    seed: int = 0


@dataclass(eq=False)
class GenerationResult:
    grid: TokenGrid
    n_generated: int
    stopped_at_eos: bool

    @property
    def truncated(self) -> bool:
        return self.grid.truncated


# Functions
def bos_prompt(vocab: Vocabulary) -> TokenGrid:
    grid = TokenGrid.empty(vocab, 1, 1)
    grid.tokens[0, 0, vocab.text_stream] = vocab.bos
    grid.stream_mask[0, 0, vocab.text_stream] = True
    grid.frame_kind[0, 0] = FrameKind.TEXT
    grid.doc_ids[0, 0] = 0
    return grid


def mode_after(grid: TokenGrid, vocab: Vocabulary, row: int = 0) -> tuple[Mode, int]:
    """The mode after the last position of `row`, and the frames already in the open segment."""
    mode, frames = Mode.TEXT, 0
    for t in range(grid.length):
        kind = grid.frame_kind[row, t]
        if kind == FrameKind.TEXT:
            token = grid.tokens[row, t, vocab.text_stream]
            frames = 0
            if token == vocab.reason_begin:
                mode = Mode.REASON
            elif token == vocab.recon_begin:
                mode = Mode.RECON
            elif token != vocab.audio_begin:
                mode = Mode.TEXT
        elif kind in (FrameKind.REASON, FrameKind.RECON):
            frames += 1
    return mode, frames


def _append(grid: TokenGrid, vocab: Vocabulary, kind: FrameKind, tokens: np.ndarray, item_id: int) -> TokenGrid:
    step = TokenGrid.empty(vocab, 1, 1)
    k = vocab.n_books
    if kind == FrameKind.TEXT:
        step.tokens[0, 0, k] = tokens[0]
        step.stream_mask[0, 0, k] = True
    else:
        step.tokens[0, 0, :k] = tokens
        step.stream_mask[0, 0, :k] = True
        step.audio_mask[0, 0] = True
    step.frame_kind[0, 0] = kind
    step.item_ids[0, 0] = item_id
    step.doc_ids[0, 0] = grid.doc_ids[0, -1]
    return TokenGrid.concatenate([grid, step], vocab)


def generate(prompt: TokenGrid, state: BackboneState, policy: SamplingPolicy) -> GenerationResult:
    """Extend the first row of `prompt` until EOS or the length cap.

    Raises:
        ValueError: For an empty prompt.
    """
    vocab = state.vocab
    if prompt.length == 0:
        raise ValueError("Generation needs a prompt of at least one position.")
    rng = np.random.default_rng(policy.seed)
    grid = prompt.row(0)
    grid.truncated = False
    mode, frames = mode_after(grid, vocab)
    cap = min(policy.max_length, state.config.max_context)
    markers = {vocab.reason_begin, vocab.recon_begin, vocab.audio_begin, vocab.audio_end, vocab.bos, vocab.eos, vocab.sep}
    next_item = int(grid.item_ids.max(initial=-1)) + 1
    open_item = -1
    generated = 0
    stopped = False

    while True:
        if grid.length >= cap:
            grid.truncated = True
            _logger.warning(f"Generation reached the length cap of {cap} positions.")
            break
        h_last = F.reshape(F.slice_axis(forward_backbone(grid, state).h_g, 1, grid.length - 1, grid.length),
                           (1, state.config.d_model))
        text_lp = text_log_probs(state, h_last).data[0]
        match mode:
            case Mode.TEXT:
                token = sample_index(text_lp, policy.temperature, rng, policy.top_k)
                if token in markers:
                    item, open_item = -1, -1
                else:
                    if open_item < 0:
                        open_item, next_item = next_item, next_item + 1
                    item = open_item
                grid = _append(grid, vocab, FrameKind.TEXT, np.array([token]), item)
                generated += 1
                if token == vocab.eos:
                    stopped = True
                    break
                if token == vocab.reason_begin:
                    mode, frames = Mode.REASON, 0
                elif token == vocab.recon_begin:
                    mode, frames = Mode.RECON, 0
            case Mode.REASON | Mode.RECON:
                closing = vocab.recon_begin if mode == Mode.REASON else vocab.audio_end
                if frames > 0 and (np.exp(text_lp[closing]) > policy.marker_threshold or frames >= policy.max_frames):
                    grid = _append(grid, vocab, FrameKind.TEXT, np.array([closing]), -1)
                    generated += 1
                    open_item = -1
                    mode, frames = (Mode.RECON, 0) if mode == Mode.REASON else (Mode.TEXT, 0)
                    continue
                kind = TokenKind.REASON if mode == Mode.REASON else TokenKind.RECON
                tokens, _ = state.local.sample(h_last, kind, policy.temperature, rng, policy.top_k)
                if frames == 0:
                    open_item, next_item = next_item, next_item + 1
                frame_kind = FrameKind.REASON if mode == Mode.REASON else FrameKind.RECON
                grid = _append(grid, vocab, frame_kind, tokens[0], open_item)
                generated += 1
                frames += 1
    _logger.debug(f"Generated {generated} positions, eos={stopped}.")
    return GenerationResult(grid, generated, stopped)
