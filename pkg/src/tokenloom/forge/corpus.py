"""JSON-lines corpora of packed items, and the planted-dependency generator.

A record is one document:
    {"id": str, "items": [{"kind": "text"|"reason"|"recon", "tokens": [...]}, ...], "meta": {...}}
Tokens are joint-vocabulary ids; audio items list frames of K ids.

Records belong to data mixtures: an explicit `meta.mixture` tag wins, forged
sentences are 'forged', and otherwise the item order decides. Audio followed
by text is 'understanding' (as is text alone), reconstruction frames make a
record 'generation', and more than one switch between text and audio makes
it 'interleaved'.

The synthetic generator plants a reasoning → reconstruction dependency. Each
record draws a context symbol x (emitted as one text token) and reasoning
codes r at 5 Hz. Reconstruction frame t of book ℓ is
    s = (a_ℓ · r[τ(t), ℓ] + b_ℓ · x + c_ℓ) mod n
with probability `strength`, and uniform noise otherwise, where τ maps
reconstruction frames to reasoning frames by the 3, 2 repeat cycle.

Classes:
    ItemDict: Serialized item.
    CorpusRecord: Serialized document.
    SyntheticCorpusSpec: Generator settings.

Functions:
    is_corpus_record: Schema check.
    record_items: Items of a record.
    record_mixtures: Data mixtures a record belongs to.
    make_record: Build a record from items.
    corpus_text: Deterministic JSON-lines text of records.
    parse_corpus: Records from JSON-lines text.
    write_corpus: Write records to a file.
    read_corpus: Read records from a file.
    synth_corpus: Generate a planted-dependency corpus.
    dependency_triples: (x, r, s) triples of one book, for brute-force tallies.
"""
# Imports
from __future__ import annotations
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
import json
import logging
import math
import pathlib
from typing import Any, TypedDict, TypeGuard

import aiofiles
import numpy as np

from tokenloom.codec.streams import Item, frame_budget, upsample_index
from tokenloom.codec.vocab import TokenKind, Vocabulary
from tokenloom.errors import CorpusFormatError


# Consts
MIXTURES = ('understanding', 'generation', 'interleaved', 'forged')
LAYOUTS = ('generation', 'understanding', 'alternate')
_logger = logging.getLogger(__name__)


# Types
class ItemDict(TypedDict):
    kind: str
    tokens: list[Any]


class CorpusRecord(TypedDict):
    id: str
    items: list[ItemDict]
    meta: dict[str, Any]


# Classes
@dataclass(frozen=True)
class SyntheticCorpusSpec:
    """Settings of the planted-dependency generator.

    Attributes:
        seed: Seed of the coefficients and every record.
        n_records: Number of documents.
        min_duration_s, max_duration_s: Utterance length range.
        strength: Probability that a reconstruction token follows the planted rule.
        alphabet: Entries used per codebook (at most the book size).
        n_context: Number of distinct context symbols x.
        layout: Item order. 'generation' puts the context text first,
            'understanding' puts it after the audio, 'alternate' switches per record.
    """
    seed: int = 0
    n_records: int = 32
    min_duration_s: float = 1.0
    max_duration_s: float = 2.0
    strength: float = 0.9
    alphabet: int = 8
    n_context: int = 4
    layout: str = 'generation'

    def __post_init__(self):
        if not 0.0 <= self.strength <= 1.0:
            raise ValueError(f"Dependency strength must lie in [0, 1], got {self.strength}.")
        if self.alphabet < 2 or self.n_context < 1:
            raise ValueError(f"Need an alphabet of at least 2 and one context, got {self.alphabet}, {self.n_context}.")
        if not 0 < self.min_duration_s <= self.max_duration_s:
            raise ValueError(f"Bad duration range [{self.min_duration_s}, {self.max_duration_s}].")
        if self.layout not in LAYOUTS:
            raise ValueError(f"Unknown layout {self.layout!r}, expected one of {LAYOUTS}.")


# Functions
def _is_item_dict(val: Any) -> TypeGuard[ItemDict]:
    if not (isinstance(val, dict) and isinstance(val.get('tokens'), list)):
        return False
    if val.get('kind') not in (TokenKind.TEXT, TokenKind.REASON, TokenKind.RECON):
        return False
    if val['kind'] == TokenKind.TEXT:
        return all(isinstance(t, int) for t in val['tokens'])
    return all(isinstance(frame, list) and all(isinstance(t, int) for t in frame) for frame in val['tokens'])


def is_corpus_record(val: Any) -> TypeGuard[CorpusRecord]:
    return isinstance(val, dict) \
        and isinstance(val.get('id'), str) \
        and isinstance(val.get('items'), list) \
        and all(_is_item_dict(item) for item in val['items']) \
        and isinstance(val.get('meta', {}), dict)


def record_items(record: CorpusRecord) -> list[Item]:
    return [Item.from_dict(item) for item in record['items']]


def record_mixtures(record: CorpusRecord) -> frozenset[str]:
    """Data mixtures `record` belongs to.

    Raises:
        CorpusFormatError: For a `meta.mixture` tag outside MIXTURES.
    """
    meta = record.get('meta') or {}
    tag = meta.get('mixture')
    if tag is not None:
        tags = frozenset([tag] if isinstance(tag, str) else tag)
        if unknown := tags - set(MIXTURES):
            raise CorpusFormatError(f"Record {record['id']}: unknown mixtures {sorted(unknown)}.")
        return tags
    if 'strategy' in meta:
        return frozenset({'forged'})
    kinds = [item['kind'] for item in record['items']]
    audio = [kind != TokenKind.TEXT for kind in kinds]
    steps = list(zip(audio, audio[1:]))
    tags: set[str] = set()
    if not any(audio) or (True, False) in steps:
        tags.add('understanding')
    if TokenKind.RECON in kinds:
        tags.add('generation')
    if sum(a != b for a, b in steps) > 1:
        tags.add('interleaved')
    return frozenset(tags)


def make_record(record_id: str, items: Iterable[Item], **meta: Any) -> CorpusRecord:
    return {'id': record_id, 'items': [item.to_dict() for item in items], 'meta': meta}  # type: ignore[misc]


def corpus_text(records: Iterable[CorpusRecord]) -> str:
    return ''.join(json.dumps(record, sort_keys=True) + '\n' for record in records)


def parse_corpus(text: str) -> list[CorpusRecord]:
    """Parse JSON-lines text.

    Raises:
        CorpusFormatError: For invalid JSON or a record not matching the schema, naming the line.
    """
    records: list[CorpusRecord] = []
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            value = json.loads(line)
        except json.JSONDecodeError as e:
            raise CorpusFormatError(f"Line {number}: invalid JSON ({e.msg}).")
        if not is_corpus_record(value):
            raise CorpusFormatError(f"Line {number}: record does not match the corpus schema.")
        value.setdefault('meta', {})
        records.append(value)
    return records


async def write_corpus(path: pathlib.Path, records: Sequence[CorpusRecord]) -> None:
    async with aiofiles.open(pathlib.Path(path), 'w') as f:
        await f.write(corpus_text(records))
    _logger.info(f"Wrote {len(records)} records to {path}.")


async def read_corpus(path: pathlib.Path) -> list[CorpusRecord]:
    async with aiofiles.open(pathlib.Path(path), 'r') as f:
        text = await f.read()
    records = parse_corpus(text)
    _logger.debug(f"Read {len(records)} records from {path}.")
    return records


def _coefficients(spec: SyntheticCorpusSpec, n_books: int, rng: np.random.Generator) -> np.ndarray:
    units = [a for a in range(1, spec.alphabet) if math.gcd(a, spec.alphabet) == 1]
    a = rng.choice(units, size=n_books)
    b = rng.integers(0, spec.alphabet, size=n_books)
    c = rng.integers(0, spec.alphabet, size=n_books)
    return np.stack([a, b, c], axis=1)


def synth_corpus(spec: SyntheticCorpusSpec, vocab: Vocabulary) -> list[CorpusRecord]:
    """Generate records of context text plus reasoning and reconstruction frames, ordered by `spec.layout`.

    Raises:
        ValueError: If the alphabet exceeds a codebook or the context exceeds the text range.
    """
    k = vocab.n_books
    if spec.alphabet > min(vocab.n_reason_per_book, vocab.n_recon_per_book):
        raise ValueError(f"Alphabet {spec.alphabet} exceeds the codebook size.")
    if spec.n_context > vocab.n_text:
        raise ValueError(f"{spec.n_context} contexts exceed {vocab.n_text} text ids.")
    rng = np.random.default_rng(spec.seed)
    coefficients = _coefficients(spec, k, rng)
    reason_offsets = np.array([vocab.book_range(TokenKind.REASON, book).start for book in range(k)])
    recon_offsets = np.array([vocab.book_range(TokenKind.RECON, book).start for book in range(k)])
    records: list[CorpusRecord] = []
    for i in range(spec.n_records):
        duration = float(rng.uniform(spec.min_duration_s, spec.max_duration_s))
        n_reason, n_recon = (max(1, n) for n in frame_budget(duration))
        x = int(rng.integers(0, spec.n_context))
        r = rng.integers(0, spec.alphabet, size=(n_reason, k))
        aligned = r[upsample_index(n_reason, n_recon)]
        planted = (coefficients[:, 0] * aligned + coefficients[:, 1] * x + coefficients[:, 2]) % spec.alphabet
        noise = rng.integers(0, spec.alphabet, size=(n_recon, k))
        s = np.where(rng.random((n_recon, k)) < spec.strength, planted, noise)
        audio = [Item.audio(TokenKind.REASON, r + reason_offsets), Item.audio(TokenKind.RECON, s + recon_offsets)]
        context = Item.text([vocab.text_range.start + x])
        text_last = spec.layout == 'understanding' or (spec.layout == 'alternate' and i % 2 == 1)
        items = [*audio, context] if text_last else [context, *audio]
        records.append(make_record(f"synth-{spec.seed}-{i}", items, context=x, duration_s=round(duration, 3),
                                   strength=spec.strength))
    _logger.info(f"Generated {len(records)} planted-dependency records (strength {spec.strength}).")
    return records


def dependency_triples(records: Iterable[CorpusRecord], vocab: Vocabulary, book: int = 0) -> np.ndarray:
    """N × 3 rows (x, r[τ(t)], s[t]) of one book across every reconstruction frame."""
    rows: list[np.ndarray] = []
    for record in records:
        items = record_items(record)
        text = next(item for item in items if item.kind == TokenKind.TEXT)
        reason = next(item for item in items if item.kind == TokenKind.REASON)
        recon = next(item for item in items if item.kind == TokenKind.RECON)
        x = int(text.tokens[0]) - vocab.text_range.start
        r = reason.tokens[:, book] - vocab.book_range(TokenKind.REASON, book).start
        s = recon.tokens[:, book] - vocab.book_range(TokenKind.RECON, book).start
        aligned = r[upsample_index(len(r), len(s))]
        rows.append(np.stack([np.full(len(s), x), aligned, s], axis=1))
    return np.concatenate(rows) if rows else np.zeros((0, 3), dtype=np.int64)
