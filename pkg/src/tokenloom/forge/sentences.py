"""Auditory-sentence constructors.

Specification:
    An auditory sentence is a document of related segments:
      1. segmented:   one long recording split into 2-8 contiguous segments
      2. speech-text: (speech, transcript) pairs in one fixed order
      3. captioned:   (audio, caption) pairs in one fixed order
      4. mixture:     triples of sources a, b and their feature-space sum c,
                      each emitted as (a, b, c), (c, a, b) or (c, b, a)
      5. variants:    one utterance rendered with different acoustic
                      attributes; every variant shares the reasoning codes
    A sentence never exceeds its context budget: trailing segments are
    dropped whole and the sentence is flagged truncated.

Classes:
    Strategy: The five constructions.
    Segment: One tagged item of a sentence.
    AuditorySentence: Ordered segments with strategy and truncation flag.
    MixtureTriple: Two sources, their mixture and the emitted order.
    SentenceForge: Draws sentences of any strategy from synthetic features.

Functions:
    fit_budget: Drop trailing segments until a sentence fits.
    make_segmented: Strategy 1.
    make_interleaved: Strategies 2 and 3.
    mixture_triple: Encode one mixture triple.
    make_mixture_triples: Strategy 4.
    make_attribute_variants: Strategy 5.
"""
# Imports
from __future__ import annotations
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import IntEnum
import logging

import numpy as np

from tokenloom.codec.features import FeatureSample, SyntheticFeatureBank
from tokenloom.codec.pipeline import CodecOutput, FactorizedCodec
from tokenloom.codec.streams import Item
from tokenloom.codec.vocab import TokenKind, Vocabulary
from tokenloom.forge.corpus import CorpusRecord, make_record


# Consts
MIN_SEGMENTS = 2
MAX_SEGMENTS = 8
MIXTURE_ORDERS = (('a', 'b', 'c'), ('c', 'a', 'b'), ('c', 'b', 'a'))
ORDERS = ('audio_first', 'text_first')
_logger = logging.getLogger(__name__)


# Classes
class Strategy(IntEnum):
    SEGMENTED = 1
    SPEECH_TEXT = 2
    CAPTIONED = 3
    MIXTURE = 4
    VARIANTS = 5


@dataclass(frozen=True, eq=False)
class Segment:
    item: Item
    provenance: str

    @property
    def kind(self) -> TokenKind:
        return self.item.kind


@dataclass(eq=False)
class AuditorySentence:
    segments: list[Segment]
    strategy: Strategy
    truncated: bool = field(default=False)

    @property
    def total_token_len(self) -> int:
        return sum(segment.item.n_positions for segment in self.segments)

    @property
    def kinds(self) -> list[TokenKind]:
        return [segment.kind for segment in self.segments]

    @property
    def items(self) -> list[Item]:
        return [segment.item for segment in self.segments]

    def to_record(self, record_id: str) -> CorpusRecord:
        return make_record(record_id, self.items, strategy=int(self.strategy),
                           provenance=[segment.provenance for segment in self.segments], truncated=self.truncated)


@dataclass(frozen=True, eq=False)
class MixtureTriple:
    a: Item
    b: Item
    c: Item
    order: tuple[str, str, str]

    def ordered(self) -> list[tuple[str, Item]]:
        return [(tag, getattr(self, tag)) for tag in self.order]


# Functions
def fit_budget(sentence: AuditorySentence, ctx_budget: int) -> AuditorySentence:
    """Drop trailing segments whole until the sentence fits `ctx_budget`."""
    if sentence.total_token_len <= ctx_budget:
        return sentence
    segments = list(sentence.segments)
    while segments and sum(s.item.n_positions for s in segments) > ctx_budget:
        segments.pop()
    _logger.warning(f"Sentence of strategy {int(sentence.strategy)} truncated from {len(sentence.segments)} "
                    f"to {len(segments)} segments for a budget of {ctx_budget}.")
    return AuditorySentence(segments, sentence.strategy, truncated=True)


def make_segmented(item: Item, ctx_budget: int, rng: np.random.Generator, max_tries: int = 100) -> AuditorySentence:
    """Split `item` at uniformly drawn boundaries into 2-8 contiguous segments.

    If the whole item exceeds the budget, trailing segments are dropped; a
    draw leaving fewer than two segments is redrawn.

    Raises:
        ValueError: If the item has fewer than two positions, or no draw fits two segments in the budget.
    """
    n = item.n_positions
    if n < MIN_SEGMENTS:
        raise ValueError(f"An item of {n} positions cannot be split into {MIN_SEGMENTS} segments.")
    for _ in range(max_tries):
        count = int(rng.integers(MIN_SEGMENTS, min(MAX_SEGMENTS, n) + 1))
        cuts = np.sort(rng.choice(np.arange(1, n), size=count - 1, replace=False))
        bounds = [0, *cuts.tolist(), n]
        segments = [Segment(Item(item.kind, item.tokens[start:stop]), f"segment{i}")
                    for i, (start, stop) in enumerate(zip(bounds[:-1], bounds[1:]))]
        sentence = fit_budget(AuditorySentence(segments, Strategy.SEGMENTED), ctx_budget)
        if len(sentence.segments) >= MIN_SEGMENTS:
            return sentence
    raise ValueError(f"No split of {n} positions fits two segments in a budget of {ctx_budget}.")


def make_interleaved(
        pairs: Sequence[tuple[Item, Item]],
        order: str = 'audio_first',
        strategy: Strategy = Strategy.SPEECH_TEXT,
        ctx_budget: int | None = None,
        ) -> AuditorySentence:
    """Alternate (audio, text) pairs, every pair in the same `order`.

    Raises:
        ValueError: For no pairs, an unknown order or a pair that is not (audio, text).
    """
    if not pairs:
        raise ValueError("Interleaving needs at least one pair.")
    if order not in ORDERS:
        raise ValueError(f"Unknown order {order!r}, expected one of {ORDERS}.")
    segments: list[Segment] = []
    for i, (audio, text) in enumerate(pairs):
        if audio.kind == TokenKind.TEXT or text.kind != TokenKind.TEXT:
            raise ValueError(f"Pair {i} must be (audio, text), got ({audio.kind}, {text.kind}).")
        first, second = (Segment(audio, f"audio{i}"), Segment(text, f"text{i}"))
        segments.extend([first, second] if order == 'audio_first' else [second, first])
    sentence = AuditorySentence(segments, strategy)
    return sentence if ctx_budget is None else fit_budget(sentence, ctx_budget)


def mixture_triple(a: FeatureSample, b: FeatureSample, codec: FactorizedCodec, vocab: Vocabulary,
                   rng: np.random.Generator) -> MixtureTriple:
    """Reconstruction items of a, b and their feature sum c, in a uniformly drawn allowed order.

    Raises:
        ValueError: If a and b are not frame-aligned.
    """
    c = a.mixed_with(b)
    _, item_a = codec.encode(a).to_items(vocab)
    _, item_b = codec.encode(b).to_items(vocab)
    _, item_c = codec.encode(c).to_items(vocab)
    return MixtureTriple(item_a, item_b, item_c, MIXTURE_ORDERS[int(rng.integers(len(MIXTURE_ORDERS)))])


def make_mixture_triples(
        a: FeatureSample,
        b: FeatureSample,
        n_chain: int,
        codec: FactorizedCodec,
        vocab: Vocabulary,
        rng: np.random.Generator,
        ctx_budget: int | None = None,
        ) -> AuditorySentence:
    """`n_chain` triples of a, b and a + b, each in its own drawn order."""
    if n_chain < 1:
        raise ValueError(f"Need at least one triple, got {n_chain}.")
    segments: list[Segment] = []
    for j in range(n_chain):
        triple = mixture_triple(a, b, codec, vocab, rng)
        segments.extend(Segment(item, f"{tag}{j + 1}") for tag, item in triple.ordered())
    sentence = AuditorySentence(segments, Strategy.MIXTURE)
    return sentence if ctx_budget is None else fit_budget(sentence, ctx_budget)


def _draw_attributes(rng: np.random.Generator) -> dict[str, float]:
    return {'rate': float(rng.choice([0.8, 1.0, 1.25])),
            'scale': float(rng.uniform(0.5, 1.5)),
            'offset': float(rng.uniform(-0.5, 0.5))}


def make_attribute_variants(
        base: FeatureSample,
        n_variants: int,
        codec: FactorizedCodec,
        vocab: Vocabulary,
        attributes: Sequence[Mapping[str, float]] | None = None,
        rng: np.random.Generator | None = None,
        ctx_budget: int | None = None,
        ) -> AuditorySentence:
    """Variants of `base`, each as (reasoning, reconstruction) segments.

    The reasoning codes are computed once from `base` and shared; each
    variant's reconstruction codes come from its transformed features
    conditioned on those shared reasoning states.

    Raises:
        ValueError: If fewer than two variants are requested or the attribute count differs.
    """
    if n_variants < 2:
        raise ValueError(f"Attribute variants need at least 2 variants, got {n_variants}.")
    if attributes is None:
        rng = rng or np.random.default_rng(0)
        attributes = [_draw_attributes(rng) for _ in range(n_variants)]
    if len(attributes) != n_variants:
        raise ValueError(f"{len(attributes)} attribute sets for {n_variants} variants.")
    reason = codec.encode_reason(base)
    segments: list[Segment] = []
    for i, attrs in enumerate(attributes):
        variant = base.with_attributes(**attrs)
        reason_item, recon_item = CodecOutput(reason, codec.encode_recon(variant, reason.quantized)).to_items(vocab)
        segments.extend([Segment(reason_item, f"variant{i}.reason"), Segment(recon_item, f"variant{i}.recon")])
    sentence = AuditorySentence(segments, Strategy.VARIANTS)
    return sentence if ctx_budget is None else fit_budget(sentence, ctx_budget)


@dataclass
class SentenceForge:
    """Draws sentences of every strategy from synthetic features through a fitted codec.

    Transcripts and captions are text ids derived from the hidden symbols.
    """
    codec: FactorizedCodec
    vocab: Vocabulary
    bank: SyntheticFeatureBank
    ctx_budget: int = 2048
    duration_s: float = 2.0

    def _transcript(self, sample: FeatureSample) -> Item:
        return Item.text(self.vocab.text_range.start + sample.symbols % self.vocab.n_text)

    def _caption(self, sample: FeatureSample) -> Item:
        counts = np.bincount(sample.symbols, minlength=self.bank.n_symbols)
        return Item.text([self.vocab.text_range.start + int(np.argmax(counts)) % self.vocab.n_text])

    def _recon(self, sample: FeatureSample) -> Item:
        return self.codec.encode(sample).to_items(self.vocab)[1]

    def draw(self, strategy: Strategy, rng: np.random.Generator) -> AuditorySentence:
        match strategy:
            case Strategy.SEGMENTED:
                sample = self.bank.sample(self.duration_s * 3, rng)
                return make_segmented(self._recon(sample), self.ctx_budget, rng)
            case Strategy.SPEECH_TEXT | Strategy.CAPTIONED:
                order = ORDERS[int(rng.integers(len(ORDERS)))]
                label = self._transcript if strategy == Strategy.SPEECH_TEXT else self._caption
                samples = [self.bank.sample(self.duration_s, rng) for _ in range(int(rng.integers(1, 4)))]
                return make_interleaved([(self._recon(s), label(s)) for s in samples], order, strategy,
                                        self.ctx_budget)
            case Strategy.MIXTURE:
                a = self.bank.sample(self.duration_s, rng)
                b = self.bank.sample(self.duration_s, rng)
                return make_mixture_triples(a, b, int(rng.integers(1, 3)), self.codec, self.vocab, rng,
                                            self.ctx_budget)
            case Strategy.VARIANTS:
                base = self.bank.sample(self.duration_s, rng)
                return make_attribute_variants(base, int(rng.integers(2, 4)), self.codec, self.vocab, rng=rng,
                                               ctx_budget=self.ctx_budget)
        raise ValueError(f"Unknown strategy {strategy!r}.")

    def forge(self, strategy: Strategy | str, n: int, rng: np.random.Generator) -> list[AuditorySentence]:
        """`n` sentences of one strategy, or of uniformly drawn strategies for 'mix'."""
        sentences = []
        for _ in range(n):
            chosen = Strategy(int(rng.integers(1, 6))) if strategy == 'mix' else Strategy(int(strategy))
            sentences.append(self.draw(chosen, rng))
        return sentences
