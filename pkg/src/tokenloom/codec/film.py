"""Feature-wise linear modulation of reconstruction features by reasoning context.

The modulator's output layers start at zero weights with bias 1 (γ) and 0 (β),
so a fresh modulator is the identity map.

Classes:
    FilmModulator: γ and β networks over upsampled reasoning embeddings.

Functions:
    film: γ ⊙ S + β.
    film_modulate: Modulate S_e with a FilmModulator.
"""
# Imports
from __future__ import annotations

import numpy as np

from tokenloom.errors import ShapeError
from tokenloom.model.layers import Linear, Module
from tokenloom.tensor import Array, functional as F


# Functions
def film(features: Array, gamma: Array, beta: Array) -> Array:
    if not features.shape[-1] == gamma.shape[-1] == beta.shape[-1]:
        raise ShapeError(f"FiLM widths differ: features {features.shape}, gamma {gamma.shape}, beta {beta.shape}.")
    return F.add(F.mul(gamma, features), beta)


# Classes
class FilmModulator(Module):
    """Two-layer perceptrons mapping R̂ (frames × d_cond) to γ, β (frames × d_feature)."""

    def __init__(self, name: str, d_cond: int, d_feature: int, rng: np.random.Generator, d_hidden: int | None = None):
        d_hidden = d_cond if d_hidden is None else d_hidden
        self.d_cond = d_cond
        self.d_feature = d_feature
        self.gamma_in = Linear(f"{name}.gamma_in", d_cond, d_hidden, rng)
        self.gamma_out = Linear(f"{name}.gamma_out", d_hidden, d_feature, rng, scale=0.0)
        self.beta_in = Linear(f"{name}.beta_in", d_cond, d_hidden, rng)
        self.beta_out = Linear(f"{name}.beta_out", d_hidden, d_feature, rng, scale=0.0)
        assert self.gamma_out.bias is not None
        self.gamma_out.bias.data[...] = 1.0

    def coefficients(self, cond: Array) -> tuple[Array, Array]:
        if cond.shape[-1] != self.d_cond:
            raise ShapeError(f"Condition width {cond.shape[-1]} does not match {self.d_cond}.")
        gamma = self.gamma_out(F.gelu(self.gamma_in(cond)))
        beta = self.beta_out(F.gelu(self.beta_in(cond)))
        return gamma, beta


def film_modulate(features: Array, cond: Array, modulator: FilmModulator) -> Array:
    """Modulate S_e (frames × d) with coefficients predicted from R̂ (frames × d_cond).

    Raises:
        ShapeError: On a width or frame-count mismatch.
    """
    if features.shape[-1] != modulator.d_feature:
        raise ShapeError(f"Feature width {features.shape[-1]} does not match {modulator.d_feature}.")
    if features.shape[:-1] != cond.shape[:-1]:
        raise ShapeError(f"Features {features.shape} and condition {cond.shape} are not frame-aligned.")
    gamma, beta = modulator.coefficients(cond)
    return film(features, gamma, beta)
