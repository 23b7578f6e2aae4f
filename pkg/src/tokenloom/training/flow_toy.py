"""Training the flow decoder on planted multi-mode latents.

Every condition owns one mode mean; a clean latent is its condition's mean
plus Gaussian spread. Training draws `flow_batch` latents per step and takes
`flow_train_steps` AdamW steps at a cosine-decayed `flow_lr`, with condition
dropout. The report compares the noise-prediction loss on a fixed held-out
draw (no dropout) before and after training, and counts how many guided
samples land within `tolerance` of a mode mean.

Classes:
    FlowToyReport: Losses and sample accuracy of one run.

Functions:
    planted_latents: Latents around per-condition mode means.
    train_flow: Fit a decoder to latents.
    mode_hit_rate: Fraction of samples near a mode mean.
    run_flow_toy: Train and sample on a two-mode latent task.
"""
# Imports
from __future__ import annotations
from dataclasses import asdict, dataclass
import logging
from typing import Any

import numpy as np

from tokenloom.config import FlowConfig
from tokenloom.model.flow import FlowDecoder, flow_loss, flow_sample
from tokenloom.tensor import Tape, backward
from tokenloom.tensor.optim import AdamW, cosine_lr


# Consts
HIT_TOLERANCE = 0.2
_logger = logging.getLogger(__name__)


# Classes
@dataclass(frozen=True)
class FlowToyReport:
    initial_loss: float
    final_loss: float
    hit_rate: float
    steps: int

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


# Functions
def planted_latents(
        modes: np.ndarray,
        n: int,
        rng: np.random.Generator,
        spread: float = 0.0,
        ) -> tuple[np.ndarray, np.ndarray]:
    """n latents with uniformly drawn conditions; row i is modes[cond[i]] plus N(0, spread²) noise.

    Raises:
        ValueError: If `modes` is not conditions × latent width.
    """
    modes = np.asarray(modes, dtype=np.float64)
    if modes.ndim != 2:
        raise ValueError(f"Modes must be conditions × latent width, got shape {modes.shape}.")
    cond = rng.integers(0, modes.shape[0], size=n)
    return modes[cond] + spread * rng.standard_normal((n, modes.shape[1])), cond


def train_flow(
        decoder: FlowDecoder,
        z0: np.ndarray,
        cond: np.ndarray,
        rng: np.random.Generator,
        steps: int | None = None,
        ) -> list[float]:
    """Fit `decoder` to (z0, cond) pairs; returns the training loss of every step."""
    config = decoder.config
    steps = config.flow_train_steps if steps is None else steps
    params = decoder.parameters()
    optimizer = AdamW(params, weight_decay=0.0)
    losses: list[float] = []
    for step in range(steps):
        rows = rng.integers(0, len(z0), size=config.flow_batch)
        with Tape() as tape:
            loss = flow_loss(decoder, z0[rows], cond[rows], rng, config.cond_dropout_p)
        optimizer.step(backward(tape, loss, params), cosine_lr(step, steps, config.flow_lr))
        losses.append(loss.item())
        if (step + 1) % 500 == 0:
            _logger.debug(f"Flow step {step + 1}/{steps}: loss {np.mean(losses[-500:]):.4f}")
    return losses


def mode_hit_rate(samples: np.ndarray, modes: np.ndarray, tolerance: float = HIT_TOLERANCE) -> float:
    """Fraction of samples whose nearest mode mean lies within `tolerance` (Euclidean)."""
    distances = np.linalg.norm(samples[:, None, :] - np.asarray(modes)[None, :, :], axis=-1)
    return float(np.mean(distances.min(axis=1) <= tolerance))


def run_flow_toy(
        config: FlowConfig,
        rng: np.random.Generator,
        modes: np.ndarray | None = None,
        n_train: int = 1024,
        n_eval: int = 2048,
        n_samples: int = 200,
        ) -> FlowToyReport:
    """Train a fresh decoder and sample from it.

    Without `modes`, the conditions' means are spread evenly over [-1, 1] along
    the first latent axis, so two conditions give modes at ±1.

    Raises:
        ValueError: If the modes do not match the config's conditions and latent width.
    """
    if modes is None:
        modes = np.zeros((config.n_conditions, config.latent_dim))
        modes[:, 0] = np.linspace(-1.0, 1.0, config.n_conditions)
    modes = np.asarray(modes, dtype=np.float64)
    if modes.shape != (config.n_conditions, config.latent_dim):
        raise ValueError(f"Modes of shape {modes.shape} do not fit {config.n_conditions} conditions "
                         f"of width {config.latent_dim}.")
    decoder = FlowDecoder(config, rng)
    z0, cond = planted_latents(modes, n_train, rng)
    eval_z0, eval_cond = planted_latents(modes, n_eval, rng)
    eval_t = rng.uniform(0.0, 1.0, size=n_eval)
    eval_eps = rng.standard_normal(eval_z0.shape)

    def held_out_loss() -> float:
        return flow_loss(decoder, eval_z0, eval_cond, rng, 0.0, t=eval_t, eps=eval_eps).item()

    initial = held_out_loss()
    train_flow(decoder, z0, cond, rng)
    final = held_out_loss()
    sample_cond = rng.integers(0, config.n_conditions, size=n_samples)
    samples = flow_sample(decoder, sample_cond, rng=rng)
    report = FlowToyReport(initial, final, mode_hit_rate(samples, modes), config.flow_train_steps)
    _logger.info(f"Flow toy: loss {initial:.4f} -> {final:.4f}, {report.hit_rate:.0%} of samples on a mode.")
    return report
