"""Tests for forge/sentences"""
# Imports
from __future__ import annotations

import numpy as np
import pytest

from tokenloom.codec.features import SyntheticFeatureBank
from tokenloom.codec.pipeline import FactorizedCodec
from tokenloom.codec.streams import Item
from tokenloom.codec.vocab import TokenKind, Vocabulary, build_vocabulary
from tokenloom.config import CodecConfig
from tokenloom.forge.corpus import is_corpus_record
from tokenloom.forge.sentences import (
    MAX_SEGMENTS, MIN_SEGMENTS, MIXTURE_ORDERS, AuditorySentence, Segment, SentenceForge, Strategy, fit_budget, make_attribute_variants,
    make_interleaved, make_mixture_triples, make_segmented,
)



# Fixtures
@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


@pytest.fixture
def vocab() -> Vocabulary:
    return build_vocabulary(64, 16, 16)


@pytest.fixture
def bank() -> SyntheticFeatureBank:
    return SyntheticFeatureBank(16, noise=0.1, seed=0)


@pytest.fixture
def codec(rng: np.random.Generator, bank: SyntheticFeatureBank) -> FactorizedCodec:
    codec = FactorizedCodec(CodecConfig(fit_epochs=1), 16, 16, rng)
    codec.fit([bank.sample(2.0, rng) for _ in range(3)], rng)
    return codec


@pytest.fixture
def recording() -> Item:
    return Item.audio(TokenKind.RECON, np.arange(20 * 8).reshape(20, 8))


def texts(*lengths: int) -> AuditorySentence:
    return AuditorySentence([Segment(Item.text(range(n)), f"text{i}") for i, n in enumerate(lengths)],
                            Strategy.SPEECH_TEXT)



# Tests
def test_sentences_within_budget_are_left_alone() -> None:
    sentence = texts(4, 4, 4)
    assert fit_budget(sentence, 12) is sentence
    assert not sentence.truncated


def test_over_budget_sentences_lose_whole_trailing_segments() -> None:
    fitted = fit_budget(texts(4, 4, 4), 9)
    assert fitted.truncated
    assert [s.provenance for s in fitted.segments] == ['text0', 'text1']


def test_segmented_sentences_are_contiguous_pieces_of_the_recording(recording: Item,
                                                                    rng: np.random.Generator) -> None:
    for _ in range(10):
        sentence = make_segmented(recording, 100, rng)
        assert 2 <= len(sentence.segments) <= 8
        assert not sentence.truncated
        joined = np.concatenate([s.item.tokens for s in sentence.segments])
        np.testing.assert_array_equal(joined, recording.tokens)


def test_segmented_sentences_respect_the_budget(recording: Item, rng: np.random.Generator) -> None:
    sentence = make_segmented(recording, 10, rng)
    assert sentence.total_token_len <= 10
    assert len(sentence.segments) >= 2
    assert sentence.truncated == (sentence.total_token_len < 20)


def test_recordings_too_short_to_split_are_rejected(rng: np.random.Generator) -> None:
    with pytest.raises(ValueError):
        make_segmented(Item.audio(TokenKind.RECON, np.zeros((1, 8))), 100, rng)


def test_interleaving_keeps_one_order_for_every_pair(recording: Item) -> None:
    pairs = [(recording, Item.text([1])), (recording, Item.text([2]))]
    sentence = make_interleaved(pairs, 'text_first')
    assert sentence.kinds == [TokenKind.TEXT, TokenKind.RECON, TokenKind.TEXT, TokenKind.RECON]
    assert make_interleaved(pairs).kinds[0] == TokenKind.RECON


def test_interleaving_rejects_bad_pairs_and_orders(recording: Item) -> None:
    with pytest.raises(ValueError):
        make_interleaved([(Item.text([1]), recording)])
    with pytest.raises(ValueError):
        make_interleaved([(recording, Item.text([1]))], 'shuffled')
    with pytest.raises(ValueError):
        make_interleaved([])


def test_mixture_triples_follow_an_allowed_order(codec: FactorizedCodec, bank: SyntheticFeatureBank,
                                                 vocab: Vocabulary, rng: np.random.Generator) -> None:
    a, b = bank.sample(1.0, rng), bank.sample(1.0, rng)
    sentence = make_mixture_triples(a, b, 3, codec, vocab, rng)
    assert len(sentence.segments) == 9
    assert all(kind == TokenKind.RECON for kind in sentence.kinds)
    for j in range(3):
        tags = tuple(s.provenance[0] for s in sentence.segments[3 * j:3 * j + 3])
        assert tags in MIXTURE_ORDERS
        assert all(s.provenance.endswith(str(j + 1)) for s in sentence.segments[3 * j:3 * j + 3])


def test_mixture_chains_need_a_triple(codec: FactorizedCodec, bank: SyntheticFeatureBank, vocab: Vocabulary,
                                      rng: np.random.Generator) -> None:
    a = bank.sample(1.0, rng)
    with pytest.raises(ValueError):
        make_mixture_triples(a, a, 0, codec, vocab, rng)


def test_attribute_variants_share_their_reasoning_codes(codec: FactorizedCodec, bank: SyntheticFeatureBank,
                                                        vocab: Vocabulary, rng: np.random.Generator) -> None:
    attributes = [{'scale': 1.0}, {'scale': 1.4, 'offset': 0.3}, {'offset': -0.4}]
    sentence = make_attribute_variants(bank.sample(1.0, rng), 3, codec, vocab, attributes)
    reasons = [s.item for s in sentence.segments if s.kind == TokenKind.REASON]
    assert len(reasons) == 3
    assert reasons[0] == reasons[1] == reasons[2]
    assert sentence.kinds == [TokenKind.REASON, TokenKind.RECON] * 3


def test_attribute_variants_need_two_variants_and_matching_attributes(codec: FactorizedCodec,
                                                                      bank: SyntheticFeatureBank,
                                                                      vocab: Vocabulary,
                                                                      rng: np.random.Generator) -> None:
    base = bank.sample(1.0, rng)
    with pytest.raises(ValueError):
        make_attribute_variants(base, 1, codec, vocab)
    with pytest.raises(ValueError):
        make_attribute_variants(base, 2, codec, vocab, [{'scale': 1.0}])


@pytest.mark.parametrize('strategy', list(Strategy))
def test_forge_builds_records_of_each_strategy(codec: FactorizedCodec, bank: SyntheticFeatureBank,
                                               vocab: Vocabulary, rng: np.random.Generator,
                                               strategy: Strategy) -> None:
    forge = SentenceForge(codec, vocab, bank, ctx_budget=200, duration_s=1.0)
    for i, sentence in enumerate(forge.forge(strategy, 2, rng)):
        assert sentence.strategy == strategy
        assert sentence.total_token_len <= 200
        record = sentence.to_record(f"s{i}")
        assert is_corpus_record(record)
        assert record['meta']['strategy'] == int(strategy)


def test_mixed_forging_accepts_the_mix_keyword(codec: FactorizedCodec, bank: SyntheticFeatureBank,
                                               vocab: Vocabulary, rng: np.random.Generator) -> None:
    sentences = SentenceForge(codec, vocab, bank, duration_s=1.0).forge('mix', 6, rng)
    assert len(sentences) == 6
    assert all(isinstance(s.strategy, Strategy) for s in sentences)


@pytest.mark.slow
@pytest.mark.parametrize('strategy', list(Strategy))
def test_a_thousand_forged_sentences_keep_their_structure(codec: FactorizedCodec, bank: SyntheticFeatureBank,
                                                          vocab: Vocabulary, strategy: Strategy) -> None:
    rng = np.random.default_rng(int(strategy))
    violations: list[str] = []
    for budget in (1024, 2048):
        forge = SentenceForge(codec, vocab, bank, ctx_budget=budget, duration_s=1.0)
        for i, sentence in enumerate(forge.forge(strategy, 500, rng)):
            violations.extend(f"{budget}/{i}: {problem}" for problem in structural_violations(sentence, budget))
    assert violations == []



# Helpers
def structural_violations(sentence: AuditorySentence, budget: int) -> list[str]:
    """Every broken structural rule of one forged sentence."""
    problems: list[str] = []
    segments = sentence.segments
    tags = [segment.provenance for segment in segments]
    if sentence.total_token_len > budget:
        problems.append(f"{sentence.total_token_len} tokens over the budget")
    if any(segment.item.n_positions == 0 for segment in segments):
        problems.append("empty segment")
    match sentence.strategy:
        case Strategy.SEGMENTED:
            if not MIN_SEGMENTS <= len(segments) <= MAX_SEGMENTS:
                problems.append(f"{len(segments)} segments")
        case Strategy.SPEECH_TEXT | Strategy.CAPTIONED:
            first = segments[0].kind
            for j, segment in enumerate(segments):
                if (segment.kind == first) != (j % 2 == 0):
                    problems.append(f"pair order broken at segment {j}")
        case Strategy.MIXTURE:
            if len(segments) % 3:
                problems.append(f"{len(segments)} segments do not form triples")
            for j in range(0, len(segments) - 2, 3):
                if tuple(tag[0] for tag in tags[j:j + 3]) not in MIXTURE_ORDERS:
                    problems.append(f"triple order {tags[j:j + 3]}")
        case Strategy.VARIANTS:
            reasons = [segment.item for segment in segments if segment.kind == TokenKind.REASON]
            if len(reasons) < 2 or any(item != reasons[0] for item in reasons):
                problems.append("variants do not share reasoning codes")
    return problems
