"""Verifiable reward functions for policy optimization.

Functions:
    exact_match: 1 if the output equals the reference, else 0.
    edit_distance: Levenshtein distance between two token sequences.
    edit_similarity: 1 − distance / longer length.
    label_accuracy: 1 if the first emitted token is the label, else 0.
    reward_function: Look a reward up by name.
"""
# Imports
from __future__ import annotations
from collections.abc import Callable, Sequence

import numpy as np


# Consts
Reward = Callable[[Sequence[int], Sequence[int]], float]


# Functions
def exact_match(output: Sequence[int], reference: Sequence[int]) -> float:
    return float(list(output) == list(reference))


def edit_distance(a: Sequence[int], b: Sequence[int]) -> int:
    previous = np.arange(len(b) + 1)
    for i, x in enumerate(a, start=1):
        current = np.empty_like(previous)
        current[0] = i
        for j, y in enumerate(b, start=1):
            current[j] = min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (x != y))
        previous = current
    return int(previous[-1])


def edit_similarity(output: Sequence[int], reference: Sequence[int]) -> float:
    longest = max(len(output), len(reference))
    if longest == 0:
        return 1.0
    return 1.0 - edit_distance(output, reference) / longest


def label_accuracy(output: Sequence[int], reference: Sequence[int]) -> float:
    return float(len(output) > 0 and len(reference) > 0 and output[0] == reference[0])


REWARDS: dict[str, Reward] = {
    'exact_match': exact_match,
    'edit_distance': edit_similarity,
    'label': label_accuracy,
}


def reward_function(kind: str) -> Reward:
    try:
        return REWARDS[kind]
    except KeyError:
        raise ValueError(f"Unknown reward {kind!r}, expected one of {sorted(REWARDS)}.")
