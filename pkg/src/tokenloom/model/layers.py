"""Building blocks shared by the backbone, the local decoder and the codec.

Classes:
    Module: Owner of named parameters, collected recursively.
    Linear: x @ W + b with W stored in × out.
    RmsNorm: rms-normalize followed by a learned gain.
    Rotary: Rotary position encoding applied to queries and keys.
    SelfAttention: Multi-head attention with an additive bias mask.
    FeedForward: Two-layer GELU perceptron with 4× expansion.
    Block: Pre-norm attention + feed-forward residual block.

Functions:
    init_normal: A named parameter drawn from N(0, scale²).
    attention_bias: Additive mask from causality and document ids.
"""
# Imports
from __future__ import annotations
from collections.abc import Iterator
import dataclasses
from dataclasses import dataclass
import math

import numpy as np

from tokenloom.tensor import ATTENTION_MASK_VALUE, Array, current_dtype, functional as F


# Functions
def init_normal(name: str, shape: tuple[int, ...], rng: np.random.Generator, scale: float) -> Array:
    return Array.parameter(rng.normal(0.0, scale, size=shape), name)


def init_constant(name: str, shape: tuple[int, ...], value: float) -> Array:
    return Array.parameter(np.full(shape, value), name)


def attention_bias(doc_ids: np.ndarray, causal: bool = True) -> np.ndarray:
    """B×1×T×T additive bias: 0 where attention is allowed, a large negative elsewhere.

    A position attends to positions of its own document (and, if causal, not
    later than itself).
    """
    doc_ids = np.asarray(doc_ids)
    length = doc_ids.shape[-1]
    allowed = doc_ids[:, :, None] == doc_ids[:, None, :]
    if causal:
        allowed &= np.tril(np.ones((length, length), dtype=bool))[None]
    return np.where(allowed, 0.0, ATTENTION_MASK_VALUE).astype(current_dtype())[:, None]


# Classes
class Module:
    """Parameters are Arrays held directly, in nested modules or in lists of modules."""

    def named_parameters(self) -> Iterator[Array]:
        for value in vars(self).values():
            if isinstance(value, Array) and value.requires_grad:
                yield value
            elif isinstance(value, Module):
                yield from value.named_parameters()
            elif isinstance(value, (list, tuple)):
                for element in value:
                    if isinstance(element, Module):
                        yield from element.named_parameters()
                    elif isinstance(element, Array) and element.requires_grad:
                        yield element

    def parameters(self) -> dict[str, Array]:
        params: dict[str, Array] = {}
        for param in self.named_parameters():
            assert param.name is not None
            if param.name in params:
                raise ValueError(f"Duplicate parameter name {param.name}.")
            params[param.name] = param
        return params


class Linear(Module):
    def __init__(self, name: str, d_in: int, d_out: int, rng: np.random.Generator,
                 scale: float | None = None, bias: bool = True):
        scale = 1.0 / math.sqrt(d_in) if scale is None else scale
        self.weight = init_normal(f"{name}.weight", (d_in, d_out), rng, scale)
        self.bias = init_constant(f"{name}.bias", (d_out,), 0.0) if bias else None

    def __call__(self, x: Array) -> Array:
        return F.linear(x, self.weight, self.bias)


class RmsNorm(Module):
    def __init__(self, name: str, d: int):
        self.gain = init_constant(f"{name}.gain", (d,), 1.0)

    def __call__(self, x: Array) -> Array:
        return F.mul(F.rms_normalize(x), self.gain)


@dataclass(eq=False)
class Rotary:
    """Rotary encoding over head_dim channels, pairing channel i with i + head_dim/2."""
    head_dim: int
    base: float = 10000.0
    positions: np.ndarray | None = None

    def __post_init__(self):
        if self.head_dim % 2:
            raise ValueError(f"Rotary encoding needs an even head width, got {self.head_dim}.")
        half = self.head_dim // 2
        rotate = np.zeros((self.head_dim, self.head_dim))
        rotate[np.arange(half) + half, np.arange(half)] = -1.0
        rotate[np.arange(half), np.arange(half) + half] = 1.0
        self._rotate = rotate

    def at(self, positions: np.ndarray) -> Rotary:
        """The same encoding evaluated at explicit positions."""
        return dataclasses.replace(self, positions=np.asarray(positions))

    def tables(self, length: int) -> tuple[np.ndarray, np.ndarray]:
        half = self.head_dim // 2
        freqs = 1.0 / self.base ** (np.arange(half) * 2.0 / self.head_dim)
        positions = np.arange(length) if self.positions is None else self.positions
        if positions.shape != (length,):
            raise ValueError(f"Rotary positions {positions.shape} do not cover {length} steps.")
        angles = np.outer(positions, freqs)
        angles = np.concatenate([angles, angles], axis=-1)
        return np.cos(angles), np.sin(angles)

    def __call__(self, x: Array) -> Array:
        """Rotate x of shape ... × T × head_dim by position."""
        cos, sin = self.tables(x.shape[-2])
        rotated = F.matmul(x, F.constant(self._rotate))
        return F.add(F.mul(x, F.constant(cos)), F.mul(rotated, F.constant(sin)))


class SelfAttention(Module):
    def __init__(self, name: str, d_model: int, n_heads: int, rng: np.random.Generator, scale: float):
        if d_model % n_heads:
            raise ValueError(f"d_model {d_model} is not divisible by {n_heads} heads.")
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.wq = init_normal(f"{name}.wq", (d_model, d_model), rng, scale)
        self.wk = init_normal(f"{name}.wk", (d_model, d_model), rng, scale)
        self.wv = init_normal(f"{name}.wv", (d_model, d_model), rng, scale)
        self.wo = init_normal(f"{name}.wo", (d_model, d_model), rng, scale)

    def _heads(self, x: Array) -> Array:
        b, t, _ = x.shape
        return F.transpose(F.reshape(x, (b, t, self.n_heads, self.head_dim)), (0, 2, 1, 3))

    def __call__(self, x: Array, bias: np.ndarray, rotary: Rotary | None = None) -> Array:
        """x: B×T×d; bias: additive mask broadcastable to B×H×T×T."""
        b, t, d = x.shape
        q = self._heads(F.matmul(x, self.wq))
        k = self._heads(F.matmul(x, self.wk))
        v = self._heads(F.matmul(x, self.wv))
        if rotary is not None:
            q, k = rotary(q), rotary(k)
        scores = F.scale(F.matmul(q, F.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(self.head_dim))
        weights = F.softmax(F.add(scores, F.constant(bias)))
        mixed = F.transpose(F.matmul(weights, v), (0, 2, 1, 3))
        return F.matmul(F.reshape(mixed, (b, t, d)), self.wo)


class FeedForward(Module):
    def __init__(self, name: str, d_model: int, rng: np.random.Generator, scale: float, expansion: int = 4):
        self.w_in = Linear(f"{name}.w_in", d_model, expansion * d_model, rng, scale)
        self.w_out = Linear(f"{name}.w_out", expansion * d_model, d_model, rng, scale)

    def __call__(self, x: Array) -> Array:
        return self.w_out(F.gelu(self.w_in(x)))


class Block(Module):
    """Pre-norm residual block: h + attn(norm(h)), then + ffn(norm(h))."""

    def __init__(self, name: str, d_model: int, n_heads: int, rng: np.random.Generator, scale: float):
        self.name = name
        self.attn_norm = RmsNorm(f"{name}.attn_norm", d_model)
        self.attn = SelfAttention(f"{name}.attn", d_model, n_heads, rng, scale)
        self.ffn_norm = RmsNorm(f"{name}.ffn_norm", d_model)
        self.ffn = FeedForward(f"{name}.ffn", d_model, rng, scale)

    def __call__(self, h: Array, bias: np.ndarray, rotary: Rotary | None = None) -> Array:
        h = F.add(h, self.attn(self.attn_norm(h), bias, rotary))
        return F.add(h, self.ffn(self.ffn_norm(h)))
