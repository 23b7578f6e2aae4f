"""The frame-level local decoder that emits the K tokens of one audio frame.

Specification:
    Step 0 reads proj(h); step k > 0 reads proj(h) + E(x_{k-1}). Learned
    positional embeddings cover the K steps and attention is causal within the
    frame. Book k has its own output head over that book's entries only, so
    its distribution never leaves the book's id range.

Classes:
    FrameContext: A generation-expert state and the tokens decoded so far.
    LocalDecoder: The small autoregressive head.

Functions:
    sample_index: Temperature / top-k sampling of one index.
    local_decode_frame: Teacher-forced distributions or sampled tokens for one frame.
"""
# Imports
from __future__ import annotations
from dataclasses import dataclass, field
import logging

import numpy as np

from tokenloom.codec.vocab import TokenKind, Vocabulary
from tokenloom.model.layers import Block, Linear, Module, RmsNorm, init_normal
from tokenloom.tensor import ATTENTION_MASK_VALUE, Array, current_dtype, functional as F


# Consts
GREEDY_TEMPERATURE = 1e-6
_logger = logging.getLogger(__name__)


# Functions
def sample_index(
        logits: np.ndarray,
        temperature: float,
        rng: np.random.Generator,
        top_k: int | None = None,
        allowed: np.ndarray | None = None,
        ) -> int:
    """Draw one index from logits.

    A temperature at or below 1e-6 picks the arg-max, ties going to the lowest
    index. `allowed` masks out every index where it is False.
    """
    scores = np.asarray(logits, dtype=np.float64).copy()
    if allowed is not None:
        allowed = np.asarray(allowed, dtype=bool)
        if not allowed.any():
            raise ValueError("Sampling mask allows no index.")
        scores[~allowed] = -np.inf
    if temperature <= GREEDY_TEMPERATURE:
        return int(np.argmax(scores))
    if top_k is not None and 0 < top_k < scores.size:
        cutoff = np.sort(scores)[-top_k]
        scores[scores < cutoff] = -np.inf
    scores = scores / temperature
    probs = np.exp(scores - scores.max())
    probs /= probs.sum()
    return int(rng.choice(scores.size, p=probs))


# Classes
@dataclass
class FrameContext:
    """Hidden state h_g_t (d,) of the predicting position and the frame tokens decoded so far."""
    h_g_t: Array
    tokens: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    kind: TokenKind = TokenKind.RECON


class LocalDecoder(Module):
    def __init__(self, name: str, vocab: Vocabulary, d_model: int, n_layers: int, n_heads: int,
                 rng: np.random.Generator, init_scale: float):
        k = vocab.n_books
        self.vocab = vocab
        self.proj = Linear(f"{name}.proj", d_model, d_model, rng, init_scale)
        self.positions = init_normal(f"{name}.positions", (k, d_model), rng, init_scale)
        self.token_embed = init_normal(f"{name}.token_embed", (vocab.size, d_model), rng, 1.0)
        self.blocks = [Block(f"{name}.block{i}", d_model, n_heads, rng, init_scale) for i in range(n_layers)]
        self.norm = RmsNorm(f"{name}.norm", d_model)
        self.head_reason = init_normal(f"{name}.head_reason", (k, d_model, vocab.n_reason_per_book), rng, init_scale)
        self.head_recon = init_normal(f"{name}.head_recon", (k, d_model, vocab.n_recon_per_book), rng, init_scale)

    @property
    def n_books(self) -> int:
        return self.vocab.n_books

    def book_offsets(self, kind: TokenKind) -> np.ndarray:
        return np.array([self.vocab.book_range(kind, book).start for book in range(self.n_books)])

    def log_probs(self, h: Array, tokens: np.ndarray, kind: TokenKind) -> Array:
        """Teacher-forced log-probabilities, N × K × book size.

        Parameters:
            h: N × d predicting states.
            tokens: N × K frame ids; column k feeds step k + 1 only.
            kind: Which branch's heads to use.
        """
        n, d = h.shape
        k = self.n_books
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.shape != (n, k):
            raise ValueError(f"Frame tokens {tokens.shape} do not match {n} states × {k} books.")
        previous = np.concatenate([np.full((n, 1), self.vocab.pad), tokens[:, :-1]], axis=1)
        feed = np.ones((1, k, 1), dtype=current_dtype())
        feed[0, 0, 0] = 0.0
        x = F.add(F.reshape(self.proj(h), (n, 1, d)), self.positions)
        x = F.add(x, F.mul(F.embedding(self.token_embed, previous), F.constant(feed)))
        causal = np.where(np.tril(np.ones((k, k), dtype=bool)), 0.0, ATTENTION_MASK_VALUE)
        bias = causal.astype(current_dtype())[None, None]
        for block in self.blocks:
            x = block(x, bias)
        head = self.head_reason if kind == TokenKind.REASON else self.head_recon
        logits = F.matmul(F.transpose(self.norm(x), (1, 0, 2)), head)
        return F.log_softmax(F.transpose(logits, (1, 0, 2)))

    def local_targets(self, tokens: np.ndarray, kind: TokenKind) -> np.ndarray:
        """Frame ids as per-book entry indices."""
        return np.asarray(tokens, dtype=np.int64) - self.book_offsets(kind)[None, :]

    def sample(
            self,
            h: Array,
            kind: TokenKind,
            temperature: float,
            rng: np.random.Generator,
            top_k: int | None = None,
            prefix: np.ndarray | None = None,
            allowed: np.ndarray | None = None,
            ) -> tuple[np.ndarray, np.ndarray]:
        """Sample one frame per state; returns N × K ids and their log-probs.

        `allowed` is an optional K × book-size mask of legal entries.
        """
        n = h.shape[0]
        k = self.n_books
        offsets = self.book_offsets(kind)
        tokens = np.tile(offsets, (n, 1))
        start = 0
        if prefix is not None and len(prefix):
            prefix = np.asarray(prefix, dtype=np.int64).reshape(-1)
            tokens[:, :prefix.size] = prefix
            start = prefix.size
        chosen = np.zeros((n, k))
        for step in range(start, k):
            rows = self.log_probs(h, tokens, kind).data[:, step]
            for i in range(n):
                index = sample_index(rows[i], temperature, rng, top_k, None if allowed is None else allowed[step])
                tokens[i, step] = offsets[step] + index
                chosen[i, step] = rows[i, index]
        return tokens, chosen


def local_decode_frame(ctx: FrameContext, decoder: LocalDecoder, mode: str, temperature: float = 1.0,
                       rng: np.random.Generator | None = None, top_k: int | None = None,
                       allowed: np.ndarray | None = None) -> np.ndarray:
    """Decode one frame.

    In 'teacher' mode `ctx.tokens` holds all K tokens and the K × book-size
    log-probability rows are returned. In 'sample' mode the frame is completed
    from `ctx.tokens` and the K sampled ids are returned.

    Raises:
        ValueError: If more than K tokens are supplied or the mode is unknown.
    """
    k = decoder.n_books
    if len(ctx.tokens) > k:
        raise ValueError(f"Frame position {len(ctx.tokens)} outside [0, {k}].")
    h = F.reshape(ctx.h_g_t, (1, ctx.h_g_t.shape[-1]))
    match mode:
        case 'teacher':
            if len(ctx.tokens) != k:
                raise ValueError(f"Teacher forcing needs all {k} frame tokens, got {len(ctx.tokens)}.")
            return decoder.log_probs(h, np.asarray(ctx.tokens)[None], ctx.kind).data[0]
        case 'sample':
            tokens, _ = decoder.sample(h, ctx.kind, temperature, rng or np.random.default_rng(0), top_k,
                                       prefix=ctx.tokens, allowed=allowed)
            return tokens[0]
        case _:
            raise ValueError(f"Unknown local decoding mode {mode!r}.")
