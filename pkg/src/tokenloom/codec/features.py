"""Seeded synthetic stand-ins for frozen speech, music and semantic encoders.

Specification:
    A hidden symbol sequence at 5 Hz drives everything:
      - h_reason (25 Hz): the symbol's embedding repeated 5 times, plus noise.
      - h_ph (12.5 Hz): a projection of the upsampled symbol embedding, plus noise.
      - h_mu (12.5 Hz): an AR(1) process independent of the symbols.
      - h_env (12.5 Hz): tanh(A·h_ph + B·h_mu) plus noise.
    So the environment stream is planted as a function of the other two, and
    the phone stream depends on the reasoning content.

Classes:
    FeatureSample: Features of one synthetic utterance.
    SyntheticFeatureBank: Deterministic generator of FeatureSamples.
"""
# Imports
from __future__ import annotations
from dataclasses import dataclass, replace
import logging
import math

import numpy as np

from tokenloom.codec.streams import frame_budget, upsample_index


# Consts
FEATURE_RATE_HZ = 25.0
AR_COEFFICIENT = 0.9
_logger = logging.getLogger(__name__)


# Classes
@dataclass(frozen=True, eq=False)
class FeatureSample:
    """Continuous features of one utterance; rows are frames."""
    symbols: np.ndarray
    h_reason: np.ndarray
    h_ph: np.ndarray
    h_mu: np.ndarray
    h_env: np.ndarray

    @property
    def n_reason(self) -> int:
        return int(self.symbols.shape[0])

    @property
    def n_recon(self) -> int:
        return int(self.h_ph.shape[0])

    def mixed_with(self, other: FeatureSample) -> FeatureSample:
        """Elementwise sum of the reconstruction features; reasoning features summed likewise.

        Raises:
            ValueError: If the two samples are not frame-aligned.
        """
        if self.h_ph.shape != other.h_ph.shape or self.h_reason.shape != other.h_reason.shape:
            raise ValueError(f"Cannot mix samples of {self.n_recon} and {other.n_recon} frames.")
        return FeatureSample(self.symbols.copy(), self.h_reason + other.h_reason, self.h_ph + other.h_ph,
                             self.h_mu + other.h_mu, self.h_env + other.h_env)

    def with_attributes(self, rate: float = 1.0, scale: float = 1.0, offset: float = 0.0) -> FeatureSample:
        """Acoustic variant: reconstruction features resampled by `rate`, then scaled and shifted.

        Reasoning features are untouched.
        """
        if rate <= 0:
            raise ValueError(f"Rate must be positive, got {rate}.")
        n = max(1, round(self.n_recon / rate))
        picks = np.minimum((np.arange(n) * rate).astype(np.int64), self.n_recon - 1)

        def transform(x: np.ndarray) -> np.ndarray:
            out = x[picks]
            if scale != 1.0:
                out = out * scale
            if offset != 0.0:
                out = out + offset
            return out

        return replace(self, h_ph=transform(self.h_ph), h_mu=transform(self.h_mu), h_env=transform(self.h_env))


@dataclass(frozen=True)
class SyntheticFeatureBank:
    """Deterministic feature generator.

    Attributes:
        d_feature: Width of every feature stream.
        n_symbols: Size of the hidden symbol alphabet.
        noise: Standard deviation of the additive noise.
        seed: Seed of the fixed projections.
    """
    d_feature: int = 16
    n_symbols: int = 8
    noise: float = 0.1
    seed: int = 0

    def _tables(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        rng = np.random.default_rng(self.seed)
        d = self.d_feature
        symbols = rng.normal(0.0, 1.0, size=(self.n_symbols, d))
        phone = rng.normal(0.0, 1.0 / math.sqrt(d), size=(d, d))
        a = rng.normal(0.0, 1.0 / math.sqrt(d), size=(d, d))
        b = rng.normal(0.0, 1.0 / math.sqrt(d), size=(d, d))
        return symbols, phone, a, b

    def sample(self, duration_s: float, rng: np.random.Generator, symbols: np.ndarray | None = None) -> FeatureSample:
        """Features for `duration_s` seconds; `symbols` fixes the hidden 5 Hz content."""
        n_reason, n_recon = frame_budget(duration_s)
        n_reason = max(n_reason, 1)
        n_recon = max(n_recon, 1)
        if symbols is None:
            symbols = rng.integers(0, self.n_symbols, size=n_reason)
        symbols = np.asarray(symbols, dtype=np.int64)
        n_reason = symbols.shape[0]
        table, phone, a, b = self._tables()
        d = self.d_feature

        per_reason = int(FEATURE_RATE_HZ // 5)
        h_reason = np.repeat(table[symbols], per_reason, axis=0)
        h_reason = h_reason + rng.normal(0.0, self.noise, size=h_reason.shape)

        up = table[symbols][upsample_index(n_reason, n_recon)]
        h_ph = up @ phone + rng.normal(0.0, self.noise, size=(n_recon, d))

        h_mu = np.zeros((n_recon, d))
        state = rng.normal(0.0, 1.0, size=d)
        for t in range(n_recon):
            h_mu[t] = state
            state = AR_COEFFICIENT * state + math.sqrt(1 - AR_COEFFICIENT ** 2) * rng.normal(0.0, 1.0, size=d)

        h_env = np.tanh(h_ph @ a + h_mu @ b) + rng.normal(0.0, self.noise, size=(n_recon, d))
        _logger.debug(f"Sampled {n_reason} reasoning / {n_recon} reconstruction frames.")
        return FeatureSample(symbols, h_reason, h_ph, h_mu, h_env)

    def silence(self, like: FeatureSample) -> FeatureSample:
        """All-zero features aligned with `like`."""
        return FeatureSample(like.symbols.copy(), np.zeros_like(like.h_reason), np.zeros_like(like.h_ph),
                             np.zeros_like(like.h_mu), np.zeros_like(like.h_env))
