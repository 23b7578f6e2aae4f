"""Central finite-difference certification of analytic gradients.

Checks run in 64-bit precision: every parameter handed in must hold float64
data. An entry passes when |analytic − numeric| ≤ atol + rtol·max(|analytic|, |numeric|).

Classes:
    GradCheckReport: Worst-case errors of one check.

Functions:
    numerical_gradient: Central differences of a scalar loss w.r.t. one array.
    check_gradients: Compare the tape's gradients with central differences.
"""
# Imports
from __future__ import annotations
from collections.abc import Callable, Mapping
from dataclasses import dataclass
import logging

import numpy as np

from tokenloom.tensor.tape import Array, Tape, backward


# Consts
_logger = logging.getLogger(__name__)
DEFAULT_STEP = 1e-4
DEFAULT_RTOL = 1e-4
DEFAULT_ATOL = 1e-6


# Classes
@dataclass
class GradCheckReport:
    """Outcome of a gradient check.

    Attributes:
        max_relative_error: max |a − n| / max(|a|, |n|, atol) over checked entries.
        max_normalized_error: max |a − n| / (atol + rtol·max(|a|, |n|)); ≤ 1 passes.
        worst_parameter: Name of the parameter holding the worst entry.
        checked_entries: Number of entries compared.
    """
    max_relative_error: float
    max_normalized_error: float
    worst_parameter: str | None
    checked_entries: int

    @property
    def passed(self) -> bool:
        return self.max_normalized_error <= 1.0


# Functions
def numerical_gradient(
        loss_fn: Callable[[], Array],
        param: Array,
        step: float = DEFAULT_STEP,
        entries: np.ndarray | None = None,
        ) -> np.ndarray:
    """Central differences of `loss_fn()` w.r.t. `param`, at the given flat entries."""
    flat = param.data.reshape(-1)
    grad = np.zeros_like(flat)
    indices = np.arange(flat.size) if entries is None else entries
    for i in indices:
        original = flat[i]
        flat[i] = original + step
        plus = loss_fn().item()
        flat[i] = original - step
        minus = loss_fn().item()
        flat[i] = original
        grad[i] = (plus - minus) / (2 * step)
    return grad.reshape(param.shape)


def check_gradients(
        loss_fn: Callable[[], Array],
        params: Mapping[str, Array],
        step: float = DEFAULT_STEP,
        rtol: float = DEFAULT_RTOL,
        atol: float = DEFAULT_ATOL,
        max_entries_per_param: int | None = None,
        rng: np.random.Generator | None = None,
        ) -> GradCheckReport:
    """Certify the gradients of `loss_fn` w.r.t. `params` against central differences.

    Parameters:
        loss_fn: Builds the scalar loss from the current parameter values.
        params: Named float64 parameters.
        max_entries_per_param: Sample at most this many entries per parameter.
        rng: Sampler for the entry subset; defaults to a fixed seed.

    Raises:
        ValueError: If any parameter is not float64.
    """
    for name, param in params.items():
        if param.data.dtype != np.float64:
            raise ValueError(f"Gradient checks need float64 parameters, {name} is {param.data.dtype}.")
    rng = rng or np.random.default_rng(0)

    with Tape() as tape:
        loss = loss_fn()
    analytic = backward(tape, loss, params)

    worst_rel, worst_norm, worst_name, checked = 0.0, 0.0, None, 0
    for name, param in params.items():
        size = param.data.size
        if max_entries_per_param is not None and size > max_entries_per_param:
            entries = np.sort(rng.choice(size, size=max_entries_per_param, replace=False))
        else:
            entries = np.arange(size)
        numeric = numerical_gradient(loss_fn, param, step, entries).reshape(-1)[entries]
        exact = analytic[name].reshape(-1)[entries]
        diff = np.abs(exact - numeric)
        magnitude = np.maximum(np.abs(exact), np.abs(numeric))
        rel = float((diff / np.maximum(magnitude, atol)).max(initial=0.0))
        norm = float((diff / (atol + rtol * magnitude)).max(initial=0.0))
        checked += entries.size
        if norm > worst_norm:
            worst_norm, worst_name = norm, name
        worst_rel = max(worst_rel, rel)
    _logger.debug(f"Gradient check over {checked} entries: rel={worst_rel:.3e} norm={worst_norm:.3e}")
    return GradCheckReport(worst_rel, worst_norm, worst_name, checked)
