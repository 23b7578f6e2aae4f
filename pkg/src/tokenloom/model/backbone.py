"""The layer-specialized autoregressive backbone.

Specification:
    fused embeddings → understanding experts → cross-modal blocks → generation experts

    Understanding and generation experts only update audio positions:
        H' = H + M_aud ⊙ (f(H) − H)
    realized as an exact selection, so text rows leave every expert block bit
    for bit unchanged. Cross-modal blocks update every position. Attention is
    causal and confined to each position's document.

    The state at position t − 1 predicts position t: the text head scores the
    next text token, the local decoder scores the K tokens of the next audio
    frame. Parameters belong to groups named by their first dotted component:
    understand, crossmodal, generate, local, embed, head and the stage-1
    auxiliary distill group.

Classes:
    BlockTrace: Input and output of one expert block, for inspection.
    BackboneOutput: Hidden states after each block group.
    AudioPredictions: Teacher-forced local-decoder output for one frame kind.
    Predictions: Next-position predictions with their targets.
    BackboneState: Every parameter of the model, grouped, with trainability flags.

Functions:
    forward_backbone: Run the block groups over a TokenGrid.
    predict: Teacher-forced text and audio predictions for a TokenGrid.
    ssl_targets: Frozen synthetic self-supervised targets per position.
"""
# Imports
from __future__ import annotations
from collections.abc import Iterable, Mapping
import copy
from dataclasses import dataclass, field
import logging
from typing import Self

import numpy as np

from tokenloom.codec.streams import FrameKind, StreamEmbeddings, TokenGrid, fuse_embeddings
from tokenloom.codec.vocab import TokenKind, Vocabulary, build_vocabulary
from tokenloom.config import ModelConfig
from tokenloom.errors import CheckpointError
from tokenloom.model.layers import Block, Linear, Module, RmsNorm, Rotary, attention_bias, init_normal
from tokenloom.model.local_decoder import LocalDecoder
from tokenloom.tensor import ATTENTION_MASK_VALUE, Array, current_dtype, functional as F


# Consts
GROUPS = ('understand', 'crossmodal', 'generate', 'local', 'embed', 'head', 'distill')
SAVED_GROUPS = GROUPS[:-1]
_logger = logging.getLogger(__name__)


# Classes
@dataclass(eq=False)
class BlockTrace:
    name: str
    before: np.ndarray
    after: np.ndarray


@dataclass(eq=False)
class BackboneOutput:
    fused: Array
    h_u: Array
    h_c: Array
    h_g: Array


@dataclass(eq=False)
class AudioPredictions:
    """Local-decoder log-probs (N × K × book size) and entry-index targets (N × K)."""
    log_probs: Array
    targets: np.ndarray
    positions: np.ndarray


@dataclass(eq=False)
class Predictions:
    """Teacher-forced next-position predictions.

    Attributes:
        text_log_probs: N_text × |text head| rows for predicted text positions.
        text_targets: Indices into the text head range.
        text_positions: (b, t) of each predicted text position.
        audio: Per frame kind, the local-decoder predictions.
        output: The backbone hidden states.
    """
    text_log_probs: Array
    text_targets: np.ndarray
    text_positions: np.ndarray
    audio: dict[FrameKind, AudioPredictions]
    output: BackboneOutput


class DistillDecoder(Module):
    def __init__(self, name: str, d_model: int, d_ssl: int, rng: np.random.Generator):
        self.hidden = Linear(f"{name}.hidden", d_model, d_model, rng)
        self.out = Linear(f"{name}.out", d_model, d_ssl, rng)

    def __call__(self, h: Array) -> Array:
        return self.out(F.gelu(self.hidden(h)))


class BackboneState(Module):
    """Parameters of the whole model plus per-group trainability flags."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary, rng: np.random.Generator, d_ssl: int = 16):
        d = config.d_model
        scale = config.init_scale
        self.config = config
        self.vocab = vocab
        self.embed = [init_normal(f"embed.stream{i}", (vocab.size, d), rng, 1.0) for i in range(vocab.n_streams)]
        self.understand = [Block(f"understand.{i}", d, config.n_heads, rng, scale) for i in range(config.n_understand)]
        self.crossmodal = [Block(f"crossmodal.{i}", d, config.n_heads, rng, scale) for i in range(config.n_crossmodal)]
        self.generate = [Block(f"generate.{i}", d, config.n_heads, rng, scale) for i in range(config.n_generate)]
        self.local = LocalDecoder('local', vocab, d, config.n_local, config.n_heads, rng, scale)
        self.final_norm = RmsNorm('head.norm', d)
        self.text_head = Linear('head.text', d, len(vocab.text_head_range), rng, scale)
        self.distill = DistillDecoder('distill', d, d_ssl, rng)
        self.rotary = Rotary(d // config.n_heads, config.rotary_base)
        self.trainable: dict[str, bool] = {group: True for group in GROUPS}

    @classmethod
    def initialize(cls, config: ModelConfig, d_ssl: int = 16) -> Self:
        vocab = build_vocabulary(config.n_text, config.n_reason_per_book, config.n_recon_per_book, config.n_books)
        for name, count in (('n_understand', config.n_understand), ('n_crossmodal', config.n_crossmodal),
                            ('n_generate', config.n_generate), ('n_local', config.n_local)):
            if count < 1:
                raise ValueError(f"{name} must be at least 1, got {count}.")
        return cls(config, vocab, np.random.default_rng(config.seed), d_ssl)

    @property
    def embeddings(self) -> StreamEmbeddings:
        return StreamEmbeddings(self.embed)

    @staticmethod
    def group_of(name: str) -> str:
        group = name.split('.', 1)[0]
        if group not in GROUPS:
            raise ValueError(f"Parameter {name} belongs to no group.")
        return group

    def groups(self) -> dict[str, dict[str, Array]]:
        grouped: dict[str, dict[str, Array]] = {group: {} for group in GROUPS}
        for name, param in self.parameters().items():
            grouped[self.group_of(name)][name] = param
        return grouped

    def set_trainable(self, groups: Iterable[str]) -> None:
        chosen = set(groups)
        unknown = chosen - set(GROUPS)
        if unknown:
            raise ValueError(f"Unknown parameter groups {sorted(unknown)}.")
        self.trainable = {group: group in chosen for group in GROUPS}

    def trainable_parameters(self) -> dict[str, Array]:
        return {name: p for name, p in self.parameters().items() if self.trainable[self.group_of(name)]}

    def state_arrays(self, include_distill: bool = False) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()
                if include_distill or self.group_of(name) != 'distill'}

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        """Copy checkpoint arrays into the parameters.

        Raises:
            CheckpointError: Naming the groups whose names or shapes do not match.
        """
        params = {name: p for name, p in self.parameters().items() if self.group_of(name) != 'distill'}
        given = {name for name in arrays if not name.startswith('distill.')}
        mismatched = {name.split('.', 1)[0] for name in set(params) ^ given}
        mismatched |= {self.group_of(name) for name in set(params) & given
                       if np.shape(arrays[name]) != params[name].shape}
        if mismatched:
            raise CheckpointError(f"Checkpoint does not fit the model in groups {sorted(mismatched)}.")
        for name, param in params.items():
            param.data = np.array(arrays[name], dtype=param.data.dtype)
        for name, param in self.distill.parameters().items():
            if name in arrays and np.shape(arrays[name]) == param.shape:
                param.data = np.array(arrays[name], dtype=param.data.dtype)

    def clone(self) -> BackboneState:
        """An independent copy with its own parameter buffers."""
        return copy.deepcopy(self)


# Functions
def _apply_masked(blocks: list[Block], h: Array, audio: np.ndarray, bias: np.ndarray, rotary: Rotary,
                  trace: list[BlockTrace] | None) -> Array:
    for block in blocks:
        updated = F.masked_select_add(h, block(h, bias, rotary), audio)
        if trace is not None:
            trace.append(BlockTrace(block.name, h.data.copy(), updated.data.copy()))
        h = updated
    return h


def forward_backbone(grid: TokenGrid, state: BackboneState, trace: list[BlockTrace] | None = None) -> BackboneOutput:
    """Hidden states after the understanding, cross-modal and generation groups.

    Raises:
        ValueError: If the grid is longer than the model context.
    """
    if grid.length > state.config.max_context:
        raise ValueError(f"Sequence of {grid.length} positions exceeds the context of {state.config.max_context}.")
    bias = attention_bias(grid.doc_ids, causal=True)
    audio = grid.audio_mask[..., None]
    fused = fuse_embeddings(grid, state.embeddings)
    h_u = _apply_masked(state.understand, fused, audio, bias, state.rotary, trace)
    h_c = h_u
    for block in state.crossmodal:
        h_c = block(h_c, bias, state.rotary)
    h_g = _apply_masked(state.generate, h_c, audio, bias, state.rotary, trace)
    return BackboneOutput(fused, h_u, h_c, h_g)


def text_log_probs(state: BackboneState, h: Array) -> Array:
    """Text-head log-probs over control symbols and text; PAD is never predicted."""
    logits = state.text_head(state.final_norm(h))
    pad_bias = np.zeros(logits.shape[-1], dtype=current_dtype())
    pad_bias[state.vocab.pad] = ATTENTION_MASK_VALUE
    return F.log_softmax(F.add(logits, F.constant(pad_bias)))


def predicted_positions(grid: TokenGrid) -> np.ndarray:
    """B × T mask of positions that have a same-document predecessor."""
    mask = np.zeros(grid.frame_kind.shape, dtype=bool)
    if grid.length > 1:
        mask[:, 1:] = (grid.doc_ids[:, 1:] == grid.doc_ids[:, :-1]) & (grid.frame_kind[:, 1:] != FrameKind.PAD)
    return mask


def predict(grid: TokenGrid, state: BackboneState, output: BackboneOutput | None = None) -> Predictions:
    """Teacher-forced predictions of every predicted position from its predecessor."""
    output = forward_backbone(grid, state) if output is None else output
    vocab = state.vocab
    b, t, d = output.h_g.shape
    flat = F.reshape(output.h_g, (b * t, d))
    targets = predicted_positions(grid)

    text = targets & (grid.frame_kind == FrameKind.TEXT)
    text_at = np.argwhere(text)
    rows = text_at[:, 0] * t + text_at[:, 1] - 1
    text_lp = text_log_probs(state, F.select_rows(flat, rows))
    text_targets = grid.tokens[text_at[:, 0], text_at[:, 1], vocab.text_stream] - vocab.text_head_range.start

    audio: dict[FrameKind, AudioPredictions] = {}
    for kind in (FrameKind.REASON, FrameKind.RECON):
        at = np.argwhere(targets & (grid.frame_kind == kind))
        if not len(at):
            continue
        h_rows = F.select_rows(flat, at[:, 0] * t + at[:, 1] - 1)
        frames = grid.tokens[at[:, 0], at[:, 1], :vocab.n_books]
        log_probs = state.local.log_probs(h_rows, frames, kind.token_kind)
        audio[kind] = AudioPredictions(log_probs, state.local.local_targets(frames, kind.token_kind), at)
    return Predictions(text_lp, text_targets, text_at, audio, output)


def ssl_targets(grid: TokenGrid, vocab: Vocabulary, d_ssl: int, seed: int = 1234) -> np.ndarray:
    """z_SSL per position: the sum of fixed random vectors of the audio tokens.

    Text and pad positions get zeros.
    """
    table = np.random.default_rng(seed).normal(0.0, 1.0 / np.sqrt(vocab.n_books), size=(vocab.size, d_ssl))
    k = vocab.n_books
    z = table[grid.tokens[..., :k]].sum(axis=-2)
    return np.where(grid.audio_mask[..., None], z, 0.0).astype(current_dtype())
