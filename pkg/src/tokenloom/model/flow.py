"""A small conditional noise-prediction decoder with guided Euler sampling.

Specification:
    z_t = (1 − t)·z0 + t·ε,   ε ~ N(0, I),   t ~ U[0, 1]
    loss = E ‖v(z_t, t, s) − ε‖²
    The condition is replaced by the null index with probability
    cond_dropout_p while training, so the same network also predicts
    unconditionally. Sampling integrates t = 1 → 0 with Euler steps on the
    path velocity ε̂ − ẑ0, where ẑ0 = (z_t − t·ε̂) / (1 − t) and ẑ0 = 0 at
    t = 1. Guidance mixes the two predictions:
        v̂ = v_uncond + scale · (v_cond − v_uncond)

Classes:
    FlowDecoder: Residual perceptron v(z_t, t, s).

Functions:
    guided_prediction: Classifier-free guidance of two predictions.
    flow_loss: Noise-prediction loss on a batch of clean latents.
    flow_sample: Guided Euler sampling from pure noise.
"""
# Imports
from __future__ import annotations
import logging

import numpy as np

from tokenloom.config import FlowConfig
from tokenloom.model.layers import Linear, Module, init_normal
from tokenloom.tensor import Array, current_dtype, functional as F


# Consts
GUIDANCE_SCALE = 1.5
SPEECH_STEPS = 10
SOUND_STEPS = 25
_logger = logging.getLogger(__name__)


# Classes
class FlowDecoder(Module):
    """v(z_t, t, s) with a zero-initialized output layer, so it predicts 0 before training."""

    def __init__(self, config: FlowConfig, rng: np.random.Generator, n_blocks: int = 2):
        hidden = config.flow_hidden
        self.config = config
        self.cond_embed = init_normal('flow.cond_embed', (config.n_conditions + 1, hidden), rng, 1.0)
        self.inp = Linear('flow.in', config.latent_dim + 2, hidden, rng)
        self.ups = [Linear(f'flow.block{i}.up', hidden, hidden, rng) for i in range(n_blocks)]
        self.downs = [Linear(f'flow.block{i}.down', hidden, hidden, rng) for i in range(n_blocks)]
        self.out = Linear('flow.out', hidden, config.latent_dim, rng, scale=0.0)

    @property
    def null_condition(self) -> int:
        return self.config.n_conditions

    def __call__(self, z_t: Array, t: np.ndarray, cond: np.ndarray) -> Array:
        t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
        time_features = np.concatenate([t, np.log(t + 1e-2)], axis=1).astype(current_dtype())
        h = self.inp(F.concat([z_t, F.constant(time_features)], axis=-1))
        h = F.gelu(F.add(h, F.embedding(self.cond_embed, np.asarray(cond, dtype=np.int64))))
        for up, down in zip(self.ups, self.downs):
            h = F.add(h, down(F.gelu(up(h))))
        return self.out(h)


# Functions
def guided_prediction(v_cond: np.ndarray, v_uncond: np.ndarray, scale: float) -> np.ndarray:
    """v_uncond + scale·(v_cond − v_uncond); a scale of 1 returns v_cond itself."""
    if scale == 1.0:
        return v_cond
    return v_uncond + scale * (v_cond - v_uncond)


def flow_loss(
        decoder,
        z0: np.ndarray,
        cond: np.ndarray,
        rng: np.random.Generator,
        cond_dropout_p: float = 0.1,
        t: np.ndarray | None = None,
        eps: np.ndarray | None = None,
        ) -> Array:
    """Mean over the batch of ‖v(z_t, t, s) − ε‖².

    `decoder` is any callable (z_t, t, cond) → Array; `t` and `eps` may be fixed
    by the caller, otherwise they are drawn from `rng`.
    """
    z0 = np.asarray(z0, dtype=current_dtype())
    n = z0.shape[0]
    t = rng.uniform(0.0, 1.0, size=n) if t is None else np.asarray(t, dtype=np.float64)
    eps = rng.standard_normal(z0.shape) if eps is None else np.asarray(eps)
    eps = eps.astype(current_dtype())
    cond = np.array(cond, dtype=np.int64).reshape(n)
    null = getattr(decoder, 'null_condition', None)
    if cond_dropout_p > 0 and null is not None:
        cond[rng.random(n) < cond_dropout_p] = null
    z_t = (1.0 - t[:, None]) * z0 + t[:, None] * eps
    prediction = decoder(F.constant(z_t.astype(current_dtype())), t, cond)
    return F.scale(F.sum_of_squares(F.sub(prediction, F.constant(eps))), 1.0 / n)


def flow_sample(
        decoder: FlowDecoder,
        cond: np.ndarray,
        steps: int | None = None,
        guidance_scale: float | None = None,
        rng: np.random.Generator | None = None,
        z_init: np.ndarray | None = None,
        ) -> np.ndarray:
    """Euler-integrate from noise at t = 1 to a latent at t = 0.

    `steps` and `guidance_scale` default to the decoder config's `flow_steps`
    and `guidance_scale`.

    Raises:
        ValueError: If steps < 1.
    """
    steps = decoder.config.flow_steps if steps is None else steps
    guidance_scale = decoder.config.guidance_scale if guidance_scale is None else guidance_scale
    if steps < 1:
        raise ValueError(f"Sampling needs at least one step, got {steps}.")
    cond = np.asarray(cond, dtype=np.int64).reshape(-1)
    n = cond.size
    rng = rng or np.random.default_rng(0)
    z = rng.standard_normal((n, decoder.config.latent_dim)) if z_init is None else np.array(z_init, dtype=np.float64)
    null = np.full(n, decoder.null_condition)
    times = np.linspace(1.0, 0.0, steps + 1)
    for t, t_next in zip(times[:-1], times[1:]):
        batch_t = np.full(n, t)
        z_in = F.constant(z.astype(current_dtype()))
        eps = decoder(z_in, batch_t, cond).data.astype(np.float64)
        if guidance_scale != 1.0:
            eps = guided_prediction(eps, decoder(z_in, batch_t, null).data.astype(np.float64), guidance_scale)
        z0_hat = np.zeros_like(z) if t >= 1.0 else (z - t * eps) / (1.0 - t)
        z = z + (t_next - t) * (eps - z0_hat)
    _logger.debug(f"Sampled {n} latents in {steps} steps at guidance {guidance_scale}.")
    return z
