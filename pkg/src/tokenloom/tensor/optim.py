"""AdamW with a warmed-up cosine learning-rate schedule and global-norm clipping.

Classes:
    AdamW: Decoupled weight-decay Adam over named parameters.

Functions:
    cosine_lr: Learning rate at a step of a warmed-up cosine schedule.
    clip_grad_norm: Rescale gradients to a maximum global norm.
"""
# Imports
from __future__ import annotations
from collections.abc import Mapping
import logging
import math

import numpy as np

from tokenloom.tensor import Array


# Consts
BETAS = (0.9, 0.95)
EPS = 1e-8
_logger = logging.getLogger(__name__)


# Functions
def cosine_lr(step: int, total_steps: int, base_lr: float, warmup: int = 0) -> float:
    """Linear warmup over `warmup` steps, then cosine decay to zero at `total_steps`."""
    if step < warmup:
        return base_lr * (step + 1) / warmup
    span = max(1, total_steps - warmup)
    progress = min(1.0, (step - warmup) / span)
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * progress))


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale every gradient in place so the global L2 norm is at most `max_norm`.

    Returns:
        The norm before clipping.
    """
    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for name in grads:
            grads[name] = grads[name] * factor
    return norm


# Classes
class AdamW:
    """Updates only the parameters it was given; others are never touched.

    Weight decay applies to matrices and tables, not to gains and biases.
    """

    def __init__(self, params: Mapping[str, Array], weight_decay: float = 0.01,
                 betas: tuple[float, float] = BETAS, eps: float = EPS):
        self.params = dict(params)
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.steps = 0
        self._m = {name: np.zeros_like(p.data, dtype=np.float64) for name, p in self.params.items()}
        self._v = {name: np.zeros_like(p.data, dtype=np.float64) for name, p in self.params.items()}

    def step(self, grads: Mapping[str, np.ndarray], lr: float) -> None:
        self.steps += 1
        beta1, beta2 = self.betas
        correction1 = 1.0 - beta1 ** self.steps
        correction2 = 1.0 - beta2 ** self.steps
        for name, param in self.params.items():
            grad = grads.get(name)
            if grad is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= beta1
            m += (1.0 - beta1) * grad
            v *= beta2
            v += (1.0 - beta2) * np.square(grad)
            update = (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            if self.weight_decay and param.ndim >= 2:
                update = update + self.weight_decay * param.data
            param.data -= (lr * update).astype(param.data.dtype)
