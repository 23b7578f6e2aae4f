"""Vector quantizers: plain VQ, residual VQ and the 1/1/6 group-wise VQ.

Specification:
    Every codebook reserves index 0 for the zero vector, so picking the nearest
    entry never grows a residual. Nearest-entry search is an exhaustive scan of
    squared Euclidean distances in float64, ties going to the lowest index.

    In train mode the quantized output carries a straight-through gradient
    (identity Jacobian w.r.t. the input) and the commitment loss
    β · mean((x − stopgrad(q))²) is attached.

    Codebooks move either by exponential moving averages of their assigned
    vectors or by a gradient step on the codebook loss mean ‖stopgrad(x) − e‖².
    Entries unused over an epoch are re-seeded from vectors seen in it.

Constants:
    COMMITMENT_BETA: Default commitment coefficient.
    EMA_DECAY: Default moving-average decay.
    RVQ_LEVELS: Levels of the reasoning-branch residual quantizer.
    GROUP_LEVELS: Levels given to phone, music and environment features.

Classes:
    Codebook: Entries plus usage and moving-average state.
    QuantizationResult: Codes, reconstruction, residuals and commitment loss.
    GroupBanks: The eight books of the group-wise quantizer.
    GroupwiseResult: Codes of the three groups merged into K streams.

Functions:
    vq_quantize: Quantize frames with one book.
    rvq_quantize: Quantize frames through consecutive residual levels.
    groupwise_quantize: Phone / music / environment quantization into 8 streams.
    dequantize: Sum of the entries selected by codes.
    update_codebooks: Moving-average or gradient step on the books of results.
    end_epoch: Re-seed dead entries and restart usage counting.
"""
# Imports
from __future__ import annotations
from collections.abc import Sequence
from dataclasses import dataclass, field
import logging
import math
from typing import Self

import numpy as np

from tokenloom.errors import ShapeError
from tokenloom.tensor import Array, functional as F


# Consts
COMMITMENT_BETA = 0.25
EMA_DECAY = 0.99
RVQ_LEVELS = 8
GROUP_LEVELS = (1, 1, 6)
_logger = logging.getLogger(__name__)


# Classes
@dataclass(eq=False)
class Codebook:
    """A set of n_codes entries of width dim, with index 0 pinned to zero.

    Attributes:
        name: Checkpoint name of the entries.
        entries: n_codes × dim float64 array.
        usage_counts: Assignments per entry since the last epoch end.
        cluster_size: Moving average of assignment counts.
        embed_sum: Moving average of summed assigned vectors.
    """
    name: str
    entries: np.ndarray
    usage_counts: np.ndarray = field(init=False)
    cluster_size: np.ndarray = field(init=False)
    embed_sum: np.ndarray = field(init=False)

    def __post_init__(self):
        self.entries = np.array(self.entries, dtype=np.float64)
        if self.entries.ndim != 2 or self.entries.shape[0] < 2:
            raise ValueError(f"{self.name}: a codebook needs at least 2 entries, got shape {self.entries.shape}.")
        if not np.all(np.isfinite(self.entries)):
            raise ValueError(f"{self.name}: codebook entries must be finite.")
        self.entries[0] = 0.0
        self.usage_counts = np.zeros(self.n_codes, dtype=np.int64)
        self.reset_moving_averages()

    @classmethod
    def random(cls, name: str, n_codes: int, dim: int, rng: np.random.Generator, scale: float = 1.0) -> Self:
        return cls(name, rng.normal(0.0, scale, size=(n_codes, dim)))

    @classmethod
    def from_data(cls, name: str, n_codes: int, data: np.ndarray, rng: np.random.Generator) -> Self:
        """Seed entries 1.. with distinct random rows of `data`."""
        data = np.asarray(data, dtype=np.float64)
        picks = rng.choice(data.shape[0], size=n_codes - 1, replace=data.shape[0] < n_codes - 1)
        entries = np.concatenate([np.zeros((1, data.shape[1])), data[picks]])
        return cls(name, entries)

    @property
    def n_codes(self) -> int:
        return int(self.entries.shape[0])

    @property
    def dim(self) -> int:
        return int(self.entries.shape[1])

    def reset_moving_averages(self) -> None:
        self.cluster_size = np.ones(self.n_codes, dtype=np.float64)
        self.embed_sum = self.entries.copy()

    def distances(self, x: np.ndarray) -> np.ndarray:
        """frames × n_codes squared Euclidean distances, in float64."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ShapeError(f"{self.name}: frames of shape {x.shape} do not fit entries of width {self.dim}.")
        diff = x[:, None, :] - self.entries[None, :, :]
        return (diff * diff).sum(axis=-1)

    def nearest(self, x: np.ndarray) -> np.ndarray:
        return np.argmin(self.distances(x), axis=1).astype(np.int64)

    def lookup(self, codes: np.ndarray) -> np.ndarray:
        return self.entries[np.asarray(codes, dtype=np.int64)]

    def usage_perplexity(self) -> float:
        """exp of the entropy of the assignment histogram; 0 before any use."""
        total = self.usage_counts.sum()
        if total == 0:
            return 0.0
        probs = self.usage_counts[self.usage_counts > 0] / total
        return float(math.exp(-(probs * np.log(probs)).sum()))

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {self.name: self.entries.copy()}

    def load_entries(self, entries: np.ndarray) -> None:
        entries = np.array(entries, dtype=np.float64)
        if entries.shape != self.entries.shape:
            raise ShapeError(f"{self.name}: cannot load entries {entries.shape} into {self.entries.shape}.")
        self.entries = entries
        self.entries[0] = 0.0
        self.reset_moving_averages()


@dataclass(eq=False)
class QuantizationResult:
    """Output of vq/rvq quantization.

    Attributes:
        codes: frames × levels indices.
        quantized: Reconstruction as an Array (straight-through in train mode).
        residuals: Per level, the residual left after that level (float64).
        level_inputs: Per level, the vectors that level quantized.
        commit_loss: Scalar commitment loss.
        books: The books used, one per level.
    """
    codes: np.ndarray
    quantized: Array
    residuals: list[np.ndarray]
    level_inputs: list[np.ndarray]
    commit_loss: Array
    books: list[Codebook]

    @property
    def residual_norms(self) -> np.ndarray:
        """Mean residual norm after each level."""
        return np.array([np.sqrt((r * r).sum(axis=-1)).mean() if r.size else 0.0 for r in self.residuals])


@dataclass(eq=False)
class GroupBanks:
    phone: Codebook
    music: Codebook
    env: list[Codebook]

    def __post_init__(self):
        if len(self.env) != GROUP_LEVELS[2]:
            raise ValueError(f"Environment group needs {GROUP_LEVELS[2]} books, got {len(self.env)}.")

    @property
    def books(self) -> list[Codebook]:
        return [self.phone, self.music, *self.env]


@dataclass(eq=False)
class GroupwiseResult:
    codes: np.ndarray
    phone: QuantizationResult
    music: QuantizationResult
    env: QuantizationResult

    @property
    def results(self) -> list[QuantizationResult]:
        return [self.phone, self.music, self.env]

    @property
    def commit_loss(self) -> Array:
        return F.add(F.add(self.phone.commit_loss, self.music.commit_loss), self.env.commit_loss)


# Functions
def _attach(x: Array, target: np.ndarray, train: bool, beta: float) -> tuple[Array, Array]:
    """Straight-through output and commitment loss for reconstruction `target`."""
    target_const = F.constant(target.astype(x.data.dtype))
    diff = F.sub(x, target_const)
    commit = F.scale(F.sum_of_squares(diff), beta / max(x.data.size, 1))
    if not train:
        return target_const, commit
    return F.add(x, F.constant((target - x.data).astype(x.data.dtype))), commit


def rvq_quantize(
        x: Array,
        books: Sequence[Codebook],
        n_levels: int | None = None,
        train: bool = False,
        beta: float = COMMITMENT_BETA,
        ) -> QuantizationResult:
    """Quantize frames × d through `n_levels` residual levels.

    Raises:
        ValueError: If n_levels is outside 1..len(books).
        ShapeError: If the frame width does not match the books.
    """
    n_levels = len(books) if n_levels is None else n_levels
    if not 1 <= n_levels <= len(books):
        raise ValueError(f"n_levels must lie in 1..{len(books)}, got {n_levels}.")
    residual = np.asarray(x.data, dtype=np.float64)
    if residual.ndim != 2:
        raise ShapeError(f"Quantizers take frames × d input, got shape {residual.shape}.")
    codes = np.zeros((residual.shape[0], n_levels), dtype=np.int64)
    total = np.zeros_like(residual)
    residuals: list[np.ndarray] = []
    inputs: list[np.ndarray] = []
    for level, book in enumerate(books[:n_levels]):
        inputs.append(residual)
        codes[:, level] = book.nearest(residual)
        chosen = book.lookup(codes[:, level])
        total = total + chosen
        residual = residual - chosen
        residuals.append(residual)
    quantized, commit = _attach(x, total, train, beta)
    return QuantizationResult(codes, quantized, residuals, inputs, commit, list(books[:n_levels]))


def vq_quantize(x: Array, book: Codebook, train: bool = False, beta: float = COMMITMENT_BETA) -> QuantizationResult:
    """Single-book quantization: nearest entry per frame."""
    return rvq_quantize(x, [book], 1, train, beta)


def groupwise_quantize(
        h_ph: Array,
        h_mu: Array,
        h_env: Array,
        banks: GroupBanks,
        train: bool = False,
        beta: float = COMMITMENT_BETA,
        ) -> GroupwiseResult:
    """Phone and music features get one book each, environment features six.

    Raises:
        ShapeError: If the three streams do not share a frame count.
    """
    lengths = {h_ph.shape[0], h_mu.shape[0], h_env.shape[0]}
    if len(lengths) != 1:
        raise ShapeError(f"Group streams are misaligned: {h_ph.shape}, {h_mu.shape}, {h_env.shape}.")
    phone = vq_quantize(h_ph, banks.phone, train, beta)
    music = vq_quantize(h_mu, banks.music, train, beta)
    env = rvq_quantize(h_env, banks.env, len(banks.env), train, beta)
    codes = np.concatenate([phone.codes, music.codes, env.codes], axis=1)
    return GroupwiseResult(codes, phone, music, env)


def dequantize(codes: np.ndarray, books: Sequence[Codebook]) -> np.ndarray:
    """Sum of the entries picked by each level's codes."""
    codes = np.asarray(codes, dtype=np.int64)
    if codes.ndim != 2 or codes.shape[1] > len(books):
        raise ShapeError(f"Codes of shape {codes.shape} do not fit {len(books)} books.")
    total = np.zeros((codes.shape[0], books[0].dim))
    for level in range(codes.shape[1]):
        total = total + books[level].lookup(codes[:, level])
    return total


def update_codebooks(
        results: Sequence[QuantizationResult],
        mode: str = 'ema',
        decay: float = EMA_DECAY,
        lr: float = 0.1,
        ) -> list[Codebook]:
    """Move every book used by `results` toward its assigned vectors.

    Index 0 stays the zero vector. Returns the updated books.
    """
    gathered: dict[int, tuple[Codebook, list[np.ndarray], list[np.ndarray]]] = {}
    for result in results:
        for level, book in enumerate(result.books):
            entry = gathered.setdefault(id(book), (book, [], []))
            entry[1].append(result.level_inputs[level])
            entry[2].append(result.codes[:, level])

    updated: list[Codebook] = []
    for book, inputs, assignments in gathered.values():
        vectors = np.concatenate(inputs)
        codes = np.concatenate(assignments)
        counts = np.bincount(codes, minlength=book.n_codes)
        sums = np.zeros_like(book.entries)
        np.add.at(sums, codes, vectors)
        book.usage_counts += counts
        match mode:
            case 'ema':
                book.cluster_size = decay * book.cluster_size + (1.0 - decay) * counts
                book.embed_sum = decay * book.embed_sum + (1.0 - decay) * sums
                live = book.cluster_size > 0
                book.entries[live] = book.embed_sum[live] / book.cluster_size[live][:, None]
            case 'gradient':
                grad = 2.0 * (counts[:, None] * book.entries - sums) / max(codes.size, 1)
                book.entries = book.entries - lr * grad
                book.reset_moving_averages()
            case _:
                raise ValueError(f"Unknown codebook update mode {mode!r}.")
        book.entries[0] = 0.0
        book.embed_sum[0] = 0.0
        updated.append(book)
    _logger.debug(f"Updated {len(updated)} codebooks in {mode} mode.")
    return updated


def end_epoch(book: Codebook, pool: np.ndarray, rng: np.random.Generator) -> int:
    """Re-seed entries unused since the last epoch end; returns how many.

    The pinned zero entry is never re-seeded.
    """
    dead = np.flatnonzero(book.usage_counts == 0)
    dead = dead[dead != 0]
    if dead.size and len(pool):
        picks = rng.choice(len(pool), size=dead.size, replace=len(pool) < dead.size)
        book.entries[dead] = np.asarray(pool, dtype=np.float64)[picks]
        book.cluster_size[dead] = 1.0
        book.embed_sum[dead] = book.entries[dead]
        _logger.warning(f"{book.name}: re-seeded {dead.size} dead entries.")
    elif dead.size:
        _logger.warning(f"{book.name}: {dead.size} dead entries kept, no vectors to re-seed them from.")
    book.usage_counts[:] = 0
    return int(dead.size) if len(pool) else 0
