"""Brute-force conditional entropies over small discrete alphabets.

Specification:
    For a joint count table over (X, R, S):
        H(S|X)   = H(X, S) − H(X)
        H(S|X,R) = H(X, R, S) − H(X, R)
        I(S;R|X) = Σ p(x,r,s) · log[ p(x) p(x,r,s) / (p(x,r) p(x,s)) ]
    The mutual information is computed directly from the table, not from the
    entropies, so H(S|X) − H(S|X,R) = I(S;R|X) is checked by two paths.
    Values are in nats.

Classes:
    EntropyGap: The three quantities.

Functions:
    tally: Count (x, r, s) triples into a joint table.
    entropy_gap: Compute the three quantities from a joint table.
"""
# Imports
from __future__ import annotations
from dataclasses import asdict, dataclass
import logging

import numpy as np


# Consts
MAX_ALPHABET = 8
_logger = logging.getLogger(__name__)


# Classes
@dataclass(frozen=True)
class EntropyGap:
    h_s_given_x: float
    h_s_given_xr: float
    mi_sr_given_x: float

    @property
    def gap(self) -> float:
        return self.h_s_given_x - self.h_s_given_xr

    def to_dict(self) -> dict[str, float]:
        return {**asdict(self), 'gap': self.gap}


# Functions
def tally(triples: np.ndarray, sizes: tuple[int, int, int]) -> np.ndarray:
    """|X| × |R| × |S| counts of the rows of an N × 3 integer array."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    counts = np.zeros(sizes, dtype=np.int64)
    np.add.at(counts, (triples[:, 0], triples[:, 1], triples[:, 2]), 1)
    return counts


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def entropy_gap(joint: np.ndarray) -> EntropyGap:
    """Conditional entropies and conditional mutual information of a joint table.

    Raises:
        ValueError: For an empty tally, a non-3-d table or an alphabet above 8.
    """
    joint = np.asarray(joint, dtype=np.float64)
    if joint.ndim != 3:
        raise ValueError(f"Expected an X × R × S table, got shape {joint.shape}.")
    if max(joint.shape) > MAX_ALPHABET:
        raise ValueError(f"Alphabets of {joint.shape} exceed {MAX_ALPHABET}.")
    total = joint.sum()
    if total <= 0:
        raise ValueError("Cannot compute entropies of an empty tally.")
    p_xrs = joint / total
    p_x = p_xrs.sum(axis=(1, 2))
    p_xr = p_xrs.sum(axis=2)
    p_xs = p_xrs.sum(axis=1)

    h_s_given_x = _entropy(p_xs) - _entropy(p_x)
    h_s_given_xr = _entropy(p_xrs) - _entropy(p_xr)

    x, r, s = np.nonzero(p_xrs)
    p = p_xrs[x, r, s]
    mi = float(np.sum(p * (np.log(p_x[x]) + np.log(p) - np.log(p_xr[x, r]) - np.log(p_xs[x, s]))))
    _logger.debug(f"H(S|X)={h_s_given_x:.6f}, H(S|X,R)={h_s_given_xr:.6f}, I(S;R|X)={mi:.6f}")
    return EntropyGap(h_s_given_x, h_s_given_xr, mi)
