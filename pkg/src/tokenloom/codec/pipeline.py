"""The factorized codec: reasoning codes at 5 Hz, reconstruction codes at 12.5 Hz.

Specification:
    reasoning:       h_reason (25 Hz) → query compression → 8-level RVQ
    reconstruction:  [h_ph | h_mu | h_env] (12.5 Hz)
                     → FiLM conditioned on the quantized reasoning states,
                       upsampled 3,2,3,2,... to 12.5 Hz
                     → group-wise VQ with 1 / 1 / 6 levels
    Fitting seeds the codebooks from encoded data, then runs epochs in which
    every utterance takes one gradient step on the compressor, the FiLM
    networks and two small heads, and the codebooks follow by moving
    averages. The step minimizes
        mse(reason_head(R̂), segment means of h_reason)
      + mse(decoder([Ŝ | R̂ upsampled]), [h_ph | h_mu | h_env])
      + commitment losses of both branches
    through the straight-through quantizer outputs.

Classes:
    CodecOutput: Quantization results and codes for one utterance.
    FactorizedCodec: The two-branch tokenizer.
"""
# Imports
from __future__ import annotations
from collections.abc import Sequence
from dataclasses import dataclass
import logging
import math

import numpy as np

from tokenloom.codec.compressor import QueryCompressor
from tokenloom.codec.features import FeatureSample
from tokenloom.codec.film import FilmModulator, film_modulate
from tokenloom.codec.quantizers import (
    GROUP_LEVELS, RVQ_LEVELS, Codebook, GroupBanks, GroupwiseResult, QuantizationResult,
    end_epoch, groupwise_quantize, rvq_quantize, update_codebooks,
)
from tokenloom.codec.streams import Item, upsample_index
from tokenloom.codec.vocab import TokenKind, Vocabulary
from tokenloom.config import CodecConfig
from tokenloom.model.layers import Linear, Module
from tokenloom.tensor import Array, Tape, backward, functional as F
from tokenloom.tensor.optim import AdamW


# Consts
_logger = logging.getLogger(__name__)


# Classes
@dataclass(eq=False)
class CodecOutput:
    reason: QuantizationResult
    recon: GroupwiseResult

    @property
    def reason_codes(self) -> np.ndarray:
        return self.reason.codes

    @property
    def recon_codes(self) -> np.ndarray:
        return self.recon.codes

    def to_items(self, vocab: Vocabulary) -> tuple[Item, Item]:
        """Reasoning and reconstruction frames as vocabulary ids."""
        return (Item.audio(TokenKind.REASON, _to_ids(self.reason_codes, vocab, TokenKind.REASON)),
                Item.audio(TokenKind.RECON, _to_ids(self.recon_codes, vocab, TokenKind.RECON)))


class FactorizedCodec(Module):
    def __init__(self, config: CodecConfig, n_reason_per_book: int, n_recon_per_book: int,
                 rng: np.random.Generator):
        d = config.d_feature
        self.config = config
        self.compressor = QueryCompressor('codec.compressor', d, rng, config.n_compress_blocks,
                                          interleave=config.interleave, init_scale=1.0 / math.sqrt(d))
        self.film = FilmModulator('codec.film', d, 3 * d, rng)
        self.reason_head = Linear('codec.reason_head', d, d, rng)
        self.decoder = Linear('codec.decoder', 4 * d, 3 * d, rng)
        self.reason_books = [Codebook.random(f'codec.reason.{level}', n_reason_per_book, d, rng)
                             for level in range(RVQ_LEVELS)]
        self.recon_banks = GroupBanks(
            phone=Codebook.random('codec.recon.phone', n_recon_per_book, d, rng),
            music=Codebook.random('codec.recon.music', n_recon_per_book, d, rng),
            env=[Codebook.random(f'codec.recon.env.{level}', n_recon_per_book, d, rng)
                 for level in range(GROUP_LEVELS[2])],
        )

    @property
    def books(self) -> list[Codebook]:
        return [*self.reason_books, *self.recon_banks.books]

    def compress(self, sample: FeatureSample) -> Array:
        return self.compressor(F.constant(sample.h_reason))

    def modulate(self, sample: FeatureSample, reason_states: Array) -> Array:
        """FiLM-modulated [h_ph | h_mu | h_env] at the reconstruction rate."""
        cond = F.select_rows(reason_states, upsample_index(reason_states.shape[0], sample.n_recon))
        features = F.constant(np.concatenate([sample.h_ph, sample.h_mu, sample.h_env], axis=-1))
        return film_modulate(features, cond, self.film)

    def _split(self, modulated: Array) -> tuple[Array, Array, Array]:
        d = self.config.d_feature
        return tuple(F.slice_axis(modulated, -1, i * d, (i + 1) * d) for i in range(3))  # type: ignore[return-value]

    def encode_reason(self, sample: FeatureSample, train: bool = False) -> QuantizationResult:
        return rvq_quantize(self.compress(sample), self.reason_books, RVQ_LEVELS, train, self.config.commitment_beta)

    def encode_recon(self, sample: FeatureSample, reason_states: Array, train: bool = False) -> GroupwiseResult:
        """Reconstruction codes of `sample` conditioned on given quantized reasoning states."""
        h_ph, h_mu, h_env = self._split(self.modulate(sample, reason_states))
        return groupwise_quantize(h_ph, h_mu, h_env, self.recon_banks, train, self.config.commitment_beta)

    def encode(self, sample: FeatureSample, train: bool = False) -> CodecOutput:
        reason = self.encode_reason(sample, train)
        return CodecOutput(reason, self.encode_recon(sample, reason.quantized, train))

    def training_loss(self, sample: FeatureSample, output: CodecOutput) -> Array:
        """Semantic, reconstruction and commitment terms of one train-mode encoding."""
        reason_states = output.reason.quantized
        m = reason_states.shape[0]
        semantic = _mse(self.reason_head(reason_states), _segment_means(sample.h_reason, self.compressor.interleave, m))
        cond = F.select_rows(reason_states, upsample_index(m, sample.n_recon))
        quantized = F.concat([result.quantized for result in output.recon.results], axis=-1)
        decoded = self.decoder(F.concat([quantized, cond], axis=-1))
        reconstruction = _mse(decoded, np.concatenate([sample.h_ph, sample.h_mu, sample.h_env], axis=-1))
        commit = F.add(output.reason.commit_loss, output.recon.commit_loss)
        return F.add(F.add(semantic, reconstruction), commit)

    def fit(self, samples: Sequence[FeatureSample], rng: np.random.Generator, epochs: int | None = None) -> dict[str, float]:
        """Seed the codebooks from data, then train for `epochs` epochs.

        Returns:
            Usage perplexity per codebook after the last epoch.
        """
        epochs = self.config.fit_epochs if epochs is None else epochs
        self._seed(samples, rng)
        params = self.parameters()
        optimizer = AdamW(params, weight_decay=0.0)
        for epoch in range(epochs):
            results: list[QuantizationResult] = []
            losses: list[float] = []
            for sample in samples:
                with Tape() as tape:
                    output = self.encode(sample, train=True)
                    loss = self.training_loss(sample, output)
                optimizer.step(backward(tape, loss, params), self.config.codec_lr)
                results.extend([output.reason, *output.recon.results])
                losses.append(loss.item())
            update_codebooks(results, self.config.codebook_mode, self.config.ema_decay)
            pools: dict[int, list[np.ndarray]] = {}
            for result in results:
                for level, book in enumerate(result.books):
                    pools.setdefault(id(book), []).append(result.level_inputs[level])
            usage = {book.name: book.usage_perplexity() for book in self.books}
            for book in self.books:
                end_epoch(book, np.concatenate(pools.get(id(book), [np.zeros((0, book.dim))])), rng)
            _logger.info(f"Codec epoch {epoch + 1}/{epochs}: loss {np.mean(losses):.4f}, mean usage perplexity "
                         f"{np.mean(list(usage.values())):.2f}")
        return {book.name: book.usage_perplexity() for book in self.books} if epochs == 0 else usage

    def _seed(self, samples: Sequence[FeatureSample], rng: np.random.Generator) -> None:
        if not samples:
            raise ValueError("Cannot fit a codec on zero samples.")
        states = [self.compress(sample) for sample in samples]
        pool = np.concatenate([s.data for s in states])
        for level, book in enumerate(self.reason_books):
            self.reason_books[level] = Codebook.from_data(book.name, book.n_codes, pool, rng)
            pool = rvq_quantize(F.constant(pool), [self.reason_books[level]], 1).residuals[-1]
        modulated = np.concatenate([self.modulate(sample, state).data for sample, state in zip(samples, states)])
        d = self.config.d_feature
        banks = self.recon_banks
        banks.phone = Codebook.from_data(banks.phone.name, banks.phone.n_codes, modulated[:, :d], rng)
        banks.music = Codebook.from_data(banks.music.name, banks.music.n_codes, modulated[:, d:2 * d], rng)
        env_pool = modulated[:, 2 * d:]
        for level, book in enumerate(banks.env):
            banks.env[level] = Codebook.from_data(book.name, book.n_codes, env_pool, rng)
            env_pool = rvq_quantize(F.constant(env_pool), [banks.env[level]], 1).residuals[-1]

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = {name: param.data for name, param in self.parameters().items()}
        for book in self.books:
            arrays.update(book.state_arrays())
        return arrays


# Functions
def _to_ids(codes: np.ndarray, vocab: Vocabulary, kind: TokenKind) -> np.ndarray:
    offsets = np.array([vocab.book_range(kind, book).start for book in range(codes.shape[1])])
    return codes + offsets[None, :]


def _segment_means(h: np.ndarray, width: int, m: int) -> np.ndarray:
    """Mean of each `width`-frame window of h, one row per compressed state."""
    return np.stack([h[j * width:(j + 1) * width].mean(axis=0) for j in range(m)])


def _mse(prediction: Array, target: np.ndarray) -> Array:
    return F.scale(F.sum_of_squares(F.sub(prediction, F.constant(target))), 1.0 / max(target.size, 1))
