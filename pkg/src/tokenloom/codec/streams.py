"""Multi-stream packing, validity masks and masked-summation fusion.

Specification:
    Each sequence position holds S = K + 1 token slots: K audio books followed
    by one text slot. A text position fills only the text slot, an audio
    position fills only the K audio slots, a pad position fills none. Unused
    slots hold PAD.

    With markers enabled, a packed document is bracketed by BOS ... EOS and each
    run of audio items by AUDIO_BEGIN ... AUDIO_END, with REASON_BEGIN or
    RECON_BEGIN opening every audio item. Markers sit in the text slot.

    Reasoning frames run at 5 Hz and reconstruction frames at 12.5 Hz. Reasoning
    frame j covers 3 reconstruction frames when j is even and 2 when j is odd.

Classes:
    FrameKind: Per-position tag.
    Item: One text span or one audio frame list.
    TokenGrid: The packed B×T×S grid with its masks.
    StreamEmbeddings: One embedding table per stream.

Functions:
    pack_sequence: Pack items into a single-row grid.
    unpack_sequence: Recover the items of one grid row.
    fuse_embeddings: Masked sum of per-stream embeddings.
    frame_budget: Reasoning and reconstruction frame counts for a duration.
    upsample_index: Reasoning frame feeding each reconstruction frame.
"""
# Imports
from __future__ import annotations
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from enum import IntEnum
import logging
from typing import Any, Self

import numpy as np

from tokenloom.codec.vocab import TokenKind, Vocabulary
from tokenloom.tensor import Array, functional as F


# Consts
REASON_RATE_HZ = 5.0
RECON_RATE_HZ = 12.5
UPSAMPLE_CYCLE = (3, 2)
_logger = logging.getLogger(__name__)


# Classes
class FrameKind(IntEnum):
    PAD = 0
    TEXT = 1
    REASON = 2
    RECON = 3

    @property
    def is_audio(self) -> bool:
        return self in (FrameKind.REASON, FrameKind.RECON)

    @property
    def token_kind(self) -> TokenKind:
        match self:
            case FrameKind.TEXT:
                return TokenKind.TEXT
            case FrameKind.REASON:
                return TokenKind.REASON
            case FrameKind.RECON:
                return TokenKind.RECON
            case _:
                raise ValueError("Pad positions carry no tokens.")


@dataclass(frozen=True, eq=False)
class Item:
    """A text span (1-d ids) or an audio frame list (frames × K ids)."""
    kind: TokenKind
    tokens: np.ndarray

    @classmethod
    def text(cls, tokens: Iterable[int]) -> Self:
        return cls(TokenKind.TEXT, np.asarray(list(tokens), dtype=np.int64))

    @classmethod
    def audio(cls, kind: TokenKind | str, frames: Any) -> Self:
        return cls(TokenKind(kind), np.asarray(frames, dtype=np.int64))

    @property
    def n_positions(self) -> int:
        return int(self.tokens.shape[0])

    def to_dict(self) -> dict[str, Any]:
        return {'kind': str(self.kind), 'tokens': self.tokens.tolist()}

    @classmethod
    def from_dict(cls, record: dict[str, Any]) -> Self:
        kind = TokenKind(record['kind'])
        if kind == TokenKind.TEXT:
            return cls.text(record['tokens'])
        return cls.audio(kind, record['tokens'])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Item):
            return NotImplemented
        return (self.kind == other.kind and self.tokens.shape == other.tokens.shape
                and bool(np.array_equal(self.tokens, other.tokens)))

    def __repr__(self) -> str:
        return f"Item({self.kind}, {self.tokens.tolist()})"


@dataclass(eq=False)
class TokenGrid:
    """The packed token grid.

    Attributes:
        tokens: B×T×S ids.
        stream_mask: B×T×S validity of each slot.
        audio_mask: B×T, set at audio positions.
        frame_kind: B×T FrameKind values.
        item_ids: B×T index of the producing item, −1 for markers and pads.
        doc_ids: B×T document of origin, −1 for pads.
    """
    tokens: np.ndarray
    stream_mask: np.ndarray
    audio_mask: np.ndarray
    frame_kind: np.ndarray
    item_ids: np.ndarray
    doc_ids: np.ndarray
    truncated: bool = field(default=False)

    @classmethod
    def empty(cls, vocab: Vocabulary, batch: int = 1, length: int = 0) -> Self:
        """An all-pad grid."""
        s = vocab.n_streams
        return cls(
            tokens=np.full((batch, length, s), vocab.pad, dtype=np.int64),
            stream_mask=np.zeros((batch, length, s), dtype=bool),
            audio_mask=np.zeros((batch, length), dtype=bool),
            frame_kind=np.full((batch, length), FrameKind.PAD, dtype=np.int8),
            item_ids=np.full((batch, length), -1, dtype=np.int64),
            doc_ids=np.full((batch, length), -1, dtype=np.int64),
        )

    @property
    def batch(self) -> int:
        return int(self.tokens.shape[0])

    @property
    def length(self) -> int:
        return int(self.tokens.shape[1])

    @property
    def n_streams(self) -> int:
        return int(self.tokens.shape[2])

    def text_positions(self) -> np.ndarray:
        return self.frame_kind == FrameKind.TEXT

    def copy(self) -> TokenGrid:
        return TokenGrid(self.tokens.copy(), self.stream_mask.copy(), self.audio_mask.copy(),
                         self.frame_kind.copy(), self.item_ids.copy(), self.doc_ids.copy(), self.truncated)

    def window(self, start: int, stop: int) -> TokenGrid:
        """Positions [start, stop) of every row."""
        cut = slice(start, stop)
        return TokenGrid(self.tokens[:, cut].copy(), self.stream_mask[:, cut].copy(), self.audio_mask[:, cut].copy(),
                         self.frame_kind[:, cut].copy(), self.item_ids[:, cut].copy(), self.doc_ids[:, cut].copy(),
                         self.truncated)

    def row(self, b: int) -> TokenGrid:
        cut = slice(b, b + 1)
        return TokenGrid(self.tokens[cut].copy(), self.stream_mask[cut].copy(), self.audio_mask[cut].copy(),
                         self.frame_kind[cut].copy(), self.item_ids[cut].copy(), self.doc_ids[cut].copy(),
                         self.truncated)

    @classmethod
    def stack(cls, grids: Sequence[TokenGrid], vocab: Vocabulary, length: int | None = None) -> Self:
        """Stack single-row grids into a batch, right-padding to `length`."""
        length = max((g.length for g in grids), default=0) if length is None else length
        out = cls.empty(vocab, len(grids), length)
        for b, grid in enumerate(grids):
            if grid.batch != 1:
                raise ValueError(f"Stacking expects single-row grids, got batch {grid.batch}.")
            if grid.length > length:
                raise ValueError(f"Grid of length {grid.length} exceeds stack length {length}.")
            n = grid.length
            out.tokens[b, :n] = grid.tokens[0]
            out.stream_mask[b, :n] = grid.stream_mask[0]
            out.audio_mask[b, :n] = grid.audio_mask[0]
            out.frame_kind[b, :n] = grid.frame_kind[0]
            out.item_ids[b, :n] = grid.item_ids[0]
            out.doc_ids[b, :n] = grid.doc_ids[0]
            out.truncated = out.truncated or grid.truncated
        return out

    @classmethod
    def concatenate(cls, grids: Sequence[TokenGrid], vocab: Vocabulary) -> Self:
        """Join grids of equal batch size along the position axis."""
        if not grids:
            return cls.empty(vocab)
        return cls(
            tokens=np.concatenate([g.tokens for g in grids], axis=1),
            stream_mask=np.concatenate([g.stream_mask for g in grids], axis=1),
            audio_mask=np.concatenate([g.audio_mask for g in grids], axis=1),
            frame_kind=np.concatenate([g.frame_kind for g in grids], axis=1),
            item_ids=np.concatenate([g.item_ids for g in grids], axis=1),
            doc_ids=np.concatenate([g.doc_ids for g in grids], axis=1),
            truncated=any(g.truncated for g in grids),
        )

    def validate(self, vocab: Vocabulary) -> None:
        """Check the one-hot modality and PAD invariants.

        Raises:
            ValueError: On the first violated invariant.
        """
        k = vocab.n_books
        active = self.stream_mask.sum(axis=-1)
        audio = np.isin(self.frame_kind, (FrameKind.REASON, FrameKind.RECON))
        text = self.frame_kind == FrameKind.TEXT
        pad = self.frame_kind == FrameKind.PAD
        if not np.array_equal(self.audio_mask, audio):
            raise ValueError("Audio mask disagrees with frame kinds.")
        if np.any(active[text] != 1) or np.any(~self.stream_mask[..., k][text]):
            raise ValueError("Text positions must fill exactly the text slot.")
        if np.any(active[audio] != k) or np.any(self.stream_mask[..., k][audio]):
            raise ValueError("Audio positions must fill exactly the audio slots.")
        if np.any(active[pad] != 0):
            raise ValueError("Pad positions must fill no slot.")
        if np.any(self.tokens[~self.stream_mask] != vocab.pad):
            raise ValueError("Invalid slots must hold PAD.")


@dataclass
class StreamEmbeddings:
    """Per-stream embedding tables, each full-vocabulary × d_model."""
    tables: list[Array]

    def __post_init__(self):
        widths = {t.shape[1] for t in self.tables}
        if len(widths) > 1:
            raise ValueError(f"Stream tables disagree on width: {sorted(widths)}.")

    @property
    def d_model(self) -> int:
        return int(self.tables[0].shape[1])


# Functions
def _check_item(item: Item, vocab: Vocabulary) -> None:
    if item.kind == TokenKind.TEXT:
        if item.tokens.ndim != 1:
            raise ValueError(f"Text items are 1-d, got shape {item.tokens.shape}.")
        ids = vocab.text_range
        bad = (item.tokens < ids.start) | (item.tokens >= ids.stop)
        if np.any(bad):
            raise ValueError(f"Text token {int(item.tokens[bad][0])} outside the text range {ids}.")
        return
    if item.kind not in (TokenKind.REASON, TokenKind.RECON):
        raise ValueError(f"Cannot pack an item of kind {item.kind}.")
    if item.tokens.ndim != 2 or item.tokens.shape[1] != vocab.n_books:
        raise ValueError(f"Audio frames must supply exactly {vocab.n_books} tokens, got shape {item.tokens.shape}.")
    for book in range(vocab.n_books):
        ids = vocab.book_range(item.kind, book)
        column = item.tokens[:, book]
        bad = (column < ids.start) | (column >= ids.stop)
        if np.any(bad):
            raise ValueError(f"Token {int(column[bad][0])} outside {item.kind} book {book} range {ids}.")


def pack_sequence(items: Sequence[Item], vocab: Vocabulary, markers: bool = False, doc_id: int = 0) -> TokenGrid:
    """Pack items into a single-row TokenGrid.

    Parameters:
        items: Text spans and audio frame lists, in order.
        vocab: The joint vocabulary.
        markers: Bracket the document and its audio runs with control symbols.
        doc_id: Document id recorded for every position.

    Raises:
        ValueError: For an empty item, audio frames without K tokens or ids outside their slot's range.
    """
    for index, item in enumerate(items):
        if item.n_positions == 0:
            raise ValueError(f"Item {index} ({item.kind}) is empty and would vanish from the packed sequence.")
        _check_item(item, vocab)

    k = vocab.n_books
    rows: list[np.ndarray] = []
    kinds: list[FrameKind] = []
    owners: list[int] = []

    def put_text(token: int, owner: int) -> None:
        row = np.full(k + 1, vocab.pad, dtype=np.int64)
        row[k] = token
        rows.append(row)
        kinds.append(FrameKind.TEXT)
        owners.append(owner)

    in_audio = False
    if markers:
        put_text(vocab.bos, -1)
    for index, item in enumerate(items):
        audio = item.kind != TokenKind.TEXT
        if markers:
            if audio and not in_audio:
                put_text(vocab.audio_begin, -1)
            elif not audio and in_audio:
                put_text(vocab.audio_end, -1)
            if audio:
                put_text(vocab.reason_begin if item.kind == TokenKind.REASON else vocab.recon_begin, -1)
        in_audio = audio
        if audio:
            frame_kind = FrameKind.REASON if item.kind == TokenKind.REASON else FrameKind.RECON
            for frame in item.tokens:
                row = np.full(k + 1, vocab.pad, dtype=np.int64)
                row[:k] = frame
                rows.append(row)
                kinds.append(frame_kind)
                owners.append(index)
        else:
            for token in item.tokens:
                put_text(int(token), index)
    if markers:
        if in_audio:
            put_text(vocab.audio_end, -1)
        put_text(vocab.eos, -1)

    grid = TokenGrid.empty(vocab, 1, len(rows))
    if rows:
        frame_kind = np.asarray(kinds, dtype=np.int8)
        grid.tokens[0] = np.stack(rows)
        grid.frame_kind[0] = frame_kind
        grid.audio_mask[0] = np.isin(frame_kind, (FrameKind.REASON, FrameKind.RECON))
        grid.stream_mask[0, :, :k] = grid.audio_mask[0][:, None]
        grid.stream_mask[0, :, k] = frame_kind == FrameKind.TEXT
        grid.item_ids[0] = owners
        grid.doc_ids[0] = doc_id
    return grid


def unpack_sequence(grid: TokenGrid, vocab: Vocabulary, row: int = 0) -> list[Item]:
    """Recover the items of one row; markers and pads are dropped."""
    items: list[Item] = []
    k = vocab.n_books
    owners = grid.item_ids[row]
    kinds = grid.frame_kind[row]
    position = 0
    while position < grid.length:
        owner = owners[position]
        if owner < 0:
            position += 1
            continue
        end = position
        while end < grid.length and owners[end] == owner and kinds[end] == kinds[position]:
            end += 1
        kind = FrameKind(int(kinds[position]))
        if kind == FrameKind.TEXT:
            items.append(Item.text(grid.tokens[row, position:end, k]))
        else:
            items.append(Item.audio(kind.token_kind, grid.tokens[row, position:end, :k]))
        position = end
    return items


def fuse_embeddings(grid: TokenGrid, tables: StreamEmbeddings) -> Array:
    """h[b, t] = Σ_i m[b, t, i] · E_i(x[b, t, i]).

    Every slot is looked up; masked slots are multiplied by an exact zero.
    """
    if len(tables.tables) != grid.n_streams:
        raise ValueError(f"{len(tables.tables)} embedding tables for {grid.n_streams} streams.")
    fused: Array | None = None
    for i, table in enumerate(tables.tables):
        mask = F.constant(grid.stream_mask[..., i:i + 1].astype(table.data.dtype))
        term = F.mul(F.embedding(table, grid.tokens[..., i]), mask)
        fused = term if fused is None else F.add(fused, term)
    assert fused is not None
    return fused


def frame_budget(duration_s: float) -> tuple[int, int]:
    """(reasoning frames, reconstruction frames) for a duration, rounded half to even.

    Raises:
        ValueError: For a non-positive duration.
    """
    if not duration_s > 0:
        raise ValueError(f"Duration must be positive, got {duration_s}.")
    return round(REASON_RATE_HZ * duration_s), round(RECON_RATE_HZ * duration_s)


def upsample_index(n_reason: int, n_target: int | None = None) -> np.ndarray:
    """For each reconstruction frame, the reasoning frame it repeats.

    Reasoning frames repeat 3, 2, 3, 2, ... times. A target length truncates
    the map or extends it with the last reasoning frame.
    """
    if n_reason < 1:
        raise ValueError(f"Need at least one reasoning frame, got {n_reason}.")
    repeats = np.array([UPSAMPLE_CYCLE[j % 2] for j in range(n_reason)])
    index = np.repeat(np.arange(n_reason), repeats)
    if n_target is None:
        return index
    if n_target <= index.size:
        return index[:n_target]
    return np.concatenate([index, np.full(n_target - index.size, n_reason - 1)])
