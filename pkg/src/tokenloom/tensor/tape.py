"""Differentiable arrays and the tape that records operations on them.

An Array wraps a numpy buffer. Operations on arrays that require gradients are
appended to the active Tape, in execution order, so the tape is always
topologically sorted. `backward` walks the tape in reverse and returns the
gradients of the named leaves.

Precision and the active tape are context-local, so tapes running in different
threads never observe each other.

Classes:
    Array: A float buffer with an optional gradient requirement and name.
    Node: One recorded operation.
    Tape: An ordered record of executed operations.

Functions:
    precision: Context manager selecting float32 or float64 for new arrays.
    current_dtype: The dtype new arrays are created with.
    active_tape: The tape operations are currently recorded on, if any.
    as_array: Wrap numbers and numpy buffers as constant Arrays.
    backward: Compute gradients of a scalar root.
"""
# Imports
from __future__ import annotations
from collections.abc import Iterable, Iterator, Mapping
from contextlib import contextmanager
from contextvars import ContextVar, Token
from dataclasses import dataclass, field
import logging
from typing import TYPE_CHECKING, Any, Self

import numpy as np

if TYPE_CHECKING:
    from tokenloom.tensor.ops import Op


# Globals
_logger = logging.getLogger(__name__)
_precision: ContextVar[np.dtype] = ContextVar('precision', default=np.dtype(np.float32))
_active_tape: ContextVar['Tape | None'] = ContextVar('active_tape', default=None)
SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


# Functions
@contextmanager
def precision(dtype: Any) -> Iterator[np.dtype]:
    """Create arrays in `dtype` (float32 or float64) inside the block."""
    resolved = np.dtype(dtype)
    if resolved not in SUPPORTED_DTYPES:
        raise ValueError(f"Unsupported precision {resolved}, expected float32 or float64.")
    token = _precision.set(resolved)
    try:
        yield resolved
    finally:
        _precision.reset(token)


def current_dtype() -> np.dtype:
    return _precision.get()


def active_tape() -> Tape | None:
    return _active_tape.get()


def as_array(value: Array | np.ndarray | float | int | Iterable[float]) -> Array:
    """Return `value` unchanged if it is an Array, else a constant Array."""
    if isinstance(value, Array):
        return value
    return Array(value)


# Classes
class Array:
    """A row-major float buffer taking part in reverse-mode differentiation.

    Attributes:
        data: The numpy buffer, in the precision active at creation.
        requires_grad: Whether gradients flow to this array.
        name: Parameter name; named leaves are reported by `backward`.
    """
    __array_priority__ = 100

    def __init__(self, data: Any, requires_grad: bool = False, name: str | None = None):
        self.data: np.ndarray = np.array(data, dtype=current_dtype())
        self.requires_grad = requires_grad
        self.name = name
        self.node: Node | None = None

    @classmethod
    def wrap(cls, data: np.ndarray) -> Self:
        """Wrap a buffer produced by an op without converting its dtype."""
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = False
        out.name = None
        out.node = None
        return out

    @classmethod
    def parameter(cls, data: Any, name: str) -> Self:
        return cls(data, requires_grad=True, name=name)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float('nan')

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Array:
        return Array.wrap(self.data)

    def __add__(self, other: Any) -> Array:
        from tokenloom.tensor import functional as F
        return F.add(self, as_array(other))

    def __radd__(self, other: Any) -> Array:
        from tokenloom.tensor import functional as F
        return F.add(as_array(other), self)

    def __sub__(self, other: Any) -> Array:
        from tokenloom.tensor import functional as F
        return F.sub(self, as_array(other))

    def __rsub__(self, other: Any) -> Array:
        from tokenloom.tensor import functional as F
        return F.sub(as_array(other), self)

    def __mul__(self, other: Any) -> Array:
        from tokenloom.tensor import functional as F
        return F.mul(self, as_array(other))

    def __rmul__(self, other: Any) -> Array:
        from tokenloom.tensor import functional as F
        return F.mul(as_array(other), self)

    def __truediv__(self, other: float) -> Array:
        from tokenloom.tensor import functional as F
        return F.mul(self, as_array(1.0 / other))

    def __neg__(self) -> Array:
        from tokenloom.tensor import functional as F
        return F.mul(self, as_array(-1.0))

    def __matmul__(self, other: Any) -> Array:
        from tokenloom.tensor import functional as F
        return F.matmul(self, as_array(other))

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Array{label}{list(self.shape)}[{self.data.dtype}]"


@dataclass(eq=False)
class Node:
    """A recorded operation: the op, its operands, its result and saved state."""
    op: type[Op]
    inputs: tuple[Array, ...]
    output: Array
    attrs: dict[str, Any]
    saved: dict[str, Any]


@dataclass(eq=False)
class Tape:
    """An ordered record of operations, used as a context manager.

    Example:
        with Tape() as tape:
            loss = F.sum_of_squares(x)
        grads = backward(tape, loss)
    """
    nodes: list[Node] = field(default_factory=list)
    _token: Token[Tape | None] | None = field(default=None, init=False, repr=False)

    def record(self, node: Node) -> None:
        node.output.node = node
        self.nodes.append(node)

    def __enter__(self) -> Self:
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *_: object) -> None:
        if self._token is not None:
            _active_tape.reset(self._token)
            self._token = None

    def __len__(self) -> int:
        return len(self.nodes)


def backward(
        tape: Tape,
        root: Array,
        params: Mapping[str, Array] | Iterable[Array] | None = None,
        ) -> dict[str, np.ndarray]:
    """Propagate d(root)/d(leaf) through the tape.

    Parameters:
        tape: The tape `root` was computed on.
        root: A scalar array.
        params: Leaves that must appear in the result; unreachable ones get zeros.

    Returns:
        Gradients keyed by parameter name.

    Raises:
        ValueError: If `root` is not a scalar.
    """
    if root.data.size != 1:
        raise ValueError(f"Backward needs a scalar root, got shape {root.shape}.")

    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    leaves: dict[int, Array] = {}
    if root.is_leaf and root.requires_grad:
        leaves[id(root)] = root

    visited = 0
    for node in reversed(tape.nodes):
        grad = grads.pop(id(node.output), None)
        if grad is None:
            continue
        visited += 1
        input_grads = node.op.backward(grad, node)
        for operand, operand_grad in zip(node.inputs, input_grads):
            if operand_grad is None or not operand.requires_grad:
                continue
            key = id(operand)
            if key in grads:
                grads[key] = grads[key] + operand_grad
            else:
                grads[key] = operand_grad
            if operand.is_leaf:
                leaves[key] = operand
    _logger.debug(f"Backward visited {visited} of {len(tape.nodes)} nodes.")

    result: dict[str, np.ndarray] = {}
    for key, leaf in leaves.items():
        if leaf.name is not None and key in grads:
            result[leaf.name] = grads[key]

    if params is not None:
        named = params.values() if isinstance(params, Mapping) else params
        for param in named:
            if param.name is None:
                raise ValueError("Parameters passed to backward must be named.")
            if param.name not in result:
                result[param.name] = np.zeros_like(param.data)
    return result
