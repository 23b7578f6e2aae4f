"""The differentiable operations of the tensor substrate.

Specification:
    Every operation is a class registered under its `kind` name. An operation
    computes its result from numpy buffers and, given the gradient of its
    output, returns the gradient of each operand (None for operands that take
    no gradient). New kinds register themselves on subclassing, like message
    types keyed by their command code.

Constants:
    ATTENTION_MASK_VALUE: Additive logit used to exclude positions; finite so
        softmax stays NaN-free.

Functions:
    forward_op: Run an operation by kind name, recording it when needed.
    registered_kinds: The names of every registered operation.

Classes:
    Op: Abstract base of all operations.
"""
# Imports
from __future__ import annotations
from abc import ABC, abstractmethod
from collections.abc import Sequence
import math
from typing import Any, ClassVar

import numpy as np

from tokenloom.errors import ShapeError
from tokenloom.tensor.tape import Array, Node, active_tape


# Consts
ATTENTION_MASK_VALUE = -1e9
_GELU_C = math.sqrt(2.0 / math.pi)


# Helpers
def _broadcast_shape(a: np.ndarray, b: np.ndarray, kind: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: cannot combine shapes {a.shape} and {b.shape}.")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` back down to `shape` along broadcast dimensions."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _normalize_axes(axis: int | Sequence[int] | None, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(a % ndim for a in axes)


def _expand_reduced(grad: np.ndarray, shape: tuple[int, ...], axes: tuple[int, ...], keepdims: bool) -> np.ndarray:
    if not keepdims:
        grad = np.expand_dims(grad, axes)
    return np.broadcast_to(grad, shape)


# Classes
class Op(ABC):
    """An operation that can be recorded on a tape."""
    _registered_ops: ClassVar[dict[str, type[Op]]] = dict()
    kind: ClassVar[str]

    def __init_subclass__(cls, **kwargs: Any):
        """Register new operations by their kind name."""
        if cls.kind in cls._registered_ops:
            raise TypeError(f"Already exists an operation of kind {cls.kind!r}.")
        cls._registered_ops[cls.kind] = cls
        super().__init_subclass__(**kwargs)

    @classmethod
    def lookup(cls, kind: str) -> type[Op]:
        if kind not in cls._registered_ops:
            raise ValueError(f"{kind!r} is an unsupported operation kind.")
        return cls._registered_ops[kind]

    @classmethod
    @abstractmethod
    def forward(cls, inputs: tuple[np.ndarray, ...], attrs: dict[str, Any], saved: dict[str, Any]) -> np.ndarray:
        ...

    @classmethod
    @abstractmethod
    def backward(cls, grad: np.ndarray, node: Node) -> tuple[np.ndarray | None, ...]:
        ...


class MatMul(Op):
    """Batched matrix product over the last two axes."""
    kind: ClassVar[str] = 'matmul'

    @classmethod
    def forward(cls, inputs, attrs, saved):
        a, b = inputs
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul: cannot contract shapes {a.shape} and {b.shape}.")
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError:
            raise ShapeError(f"matmul: batch dimensions of {a.shape} and {b.shape} differ.")
        return np.matmul(a, b)

    @classmethod
    def backward(cls, grad, node):
        a, b = (x.data for x in node.inputs)
        grad_a = _unbroadcast(np.matmul(grad, np.swapaxes(b, -1, -2)), a.shape)
        grad_b = _unbroadcast(np.matmul(np.swapaxes(a, -1, -2), grad), b.shape)
        return grad_a, grad_b


class Add(Op):
    kind: ClassVar[str] = 'add'

    @classmethod
    def forward(cls, inputs, attrs, saved):
        a, b = inputs
        _broadcast_shape(a, b, cls.kind)
        return a + b

    @classmethod
    def backward(cls, grad, node):
        a, b = node.inputs
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)


class Mul(Op):
    kind: ClassVar[str] = 'mul'

    @classmethod
    def forward(cls, inputs, attrs, saved):
        a, b = inputs
        _broadcast_shape(a, b, cls.kind)
        return a * b

    @classmethod
    def backward(cls, grad, node):
        a, b = (x.data for x in node.inputs)
        return _unbroadcast(grad * b, a.shape), _unbroadcast(grad * a, b.shape)


class Embedding(Op):
    """Row lookup `table[ids]`; ids travel as an attribute."""
    kind: ClassVar[str] = 'embedding'

    @classmethod
    def forward(cls, inputs, attrs, saved):
        (table,) = inputs
        ids = np.asarray(attrs['ids'])
        if table.ndim != 2:
            raise ShapeError(f"embedding: table must be 2-d, got shape {table.shape}.")
        if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
            raise ValueError(f"embedding: ids outside [0, {table.shape[0]}).")
        return table[ids]

    @classmethod
    def backward(cls, grad, node):
        (table,) = node.inputs
        ids = np.asarray(node.attrs['ids']).reshape(-1)
        grad_table = np.zeros_like(table.data)
        np.add.at(grad_table, ids, grad.reshape(-1, table.shape[1]))
        return (grad_table,)


class Softmax(Op):
    kind: ClassVar[str] = 'softmax'

    @classmethod
    def forward(cls, inputs, attrs, saved):
        (x,) = inputs
        axis = attrs.get('axis', -1)
        shifted = np.exp(x - x.max(axis=axis, keepdims=True))
        return shifted / shifted.sum(axis=axis, keepdims=True)

    @classmethod
    def backward(cls, grad, node):
        s = node.output.data
        axis = node.attrs.get('axis', -1)
        return (s * (grad - (grad * s).sum(axis=axis, keepdims=True)),)


class LogSoftmax(Op):
    kind: ClassVar[str] = 'log_softmax'

    @classmethod
    def forward(cls, inputs, attrs, saved):
        (x,) = inputs
        axis = attrs.get('axis', -1)
        shifted = x - x.max(axis=axis, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    @classmethod
    def backward(cls, grad, node):
        axis = node.attrs.get('axis', -1)
        probs = np.exp(node.output.data)
        return (grad - probs * grad.sum(axis=axis, keepdims=True),)


class RmsNormalize(Op):
    """x / sqrt(mean(x²) + eps) over the last axis."""
    kind: ClassVar[str] = 'rms_normalize'

    @classmethod
    def forward(cls, inputs, attrs, saved):
        (x,) = inputs
        eps = attrs.get('eps', 1e-6)
        inv = 1.0 / np.sqrt((x * x).mean(axis=-1, keepdims=True) + eps)
        saved['inv'] = inv
        return x * inv

    @classmethod
    def backward(cls, grad, node):
        x = node.inputs[0].data
        inv = node.saved['inv']
        return (grad * inv - x * inv ** 3 * (grad * x).mean(axis=-1, keepdims=True),)


class Gelu(Op):
    """Tanh approximation of the Gaussian error linear unit."""
    kind: ClassVar[str] = 'gelu'

    @classmethod
    def forward(cls, inputs, attrs, saved):
        (x,) = inputs
        t = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
        saved['tanh'] = t
        return 0.5 * x * (1.0 + t)

    @classmethod
    def backward(cls, grad, node):
        x = node.inputs[0].data
        t = node.saved['tanh']
        local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (grad * local,)


class MaskedSelectAdd(Op):
    """base + mask ⊙ (update − base) for a binary mask, selected exactly.

    Positions where the mask is 0 are copied from `base` bit for bit.
    """
    kind: ClassVar[str] = 'masked_select_add'

    @classmethod
    def forward(cls, inputs, attrs, saved):
        base, update = inputs
        if base.shape != update.shape:
            raise ShapeError(f"masked_select_add: base {base.shape} and update {update.shape} differ.")
        mask = np.asarray(attrs['mask']).astype(bool)
        try:
            mask = np.broadcast_to(mask, base.shape)
        except ValueError:
            raise ShapeError(f"masked_select_add: mask {mask.shape} does not fit {base.shape}.")
        saved['mask'] = mask
        return np.where(mask, update, base)

    @classmethod
    def backward(cls, grad, node):
        mask = node.saved['mask']
        zeros = np.zeros_like(grad)
        return np.where(mask, zeros, grad), np.where(mask, grad, zeros)


class Slice(Op):
    kind: ClassVar[str] = 'slice'

    @classmethod
    def forward(cls, inputs, attrs, saved):
        (x,) = inputs
        axis = attrs['axis'] % x.ndim
        index = [slice(None)] * x.ndim
        index[axis] = slice(attrs['start'], attrs['stop'])
        saved['index'] = tuple(index)
        return x[tuple(index)].copy()

    @classmethod
    def backward(cls, grad, node):
        out = np.zeros_like(node.inputs[0].data)
        out[node.saved['index']] = grad
        return (out,)


class Concat(Op):
    kind: ClassVar[str] = 'concat'

    @classmethod
    def forward(cls, inputs, attrs, saved):
        axis = attrs.get('axis', -1)
        try:
            return np.concatenate(inputs, axis=axis)
        except ValueError:
            raise ShapeError(f"concat: shapes {[x.shape for x in inputs]} differ off axis {axis}.")

    @classmethod
    def backward(cls, grad, node):
        axis = node.attrs.get('axis', -1)
        bounds = np.cumsum([x.shape[axis] for x in node.inputs])[:-1]
        return tuple(np.split(grad, bounds, axis=axis))


class Mean(Op):
    kind: ClassVar[str] = 'mean'

    @classmethod
    def forward(cls, inputs, attrs, saved):
        (x,) = inputs
        return np.asarray(x.mean(axis=attrs.get('axis'), keepdims=attrs.get('keepdims', False)), dtype=x.dtype)

    @classmethod
    def backward(cls, grad, node):
        x = node.inputs[0].data
        axes = _normalize_axes(node.attrs.get('axis'), x.ndim)
        count = math.prod(x.shape[a] for a in axes) or 1
        return (_expand_reduced(grad, x.shape, axes, node.attrs.get('keepdims', False)) / count,)


class Sum(Op):
    kind: ClassVar[str] = 'sum'

    @classmethod
    def forward(cls, inputs, attrs, saved):
        (x,) = inputs
        return np.asarray(x.sum(axis=attrs.get('axis'), keepdims=attrs.get('keepdims', False)), dtype=x.dtype)

    @classmethod
    def backward(cls, grad, node):
        x = node.inputs[0].data
        axes = _normalize_axes(node.attrs.get('axis'), x.ndim)
        return (np.array(_expand_reduced(grad, x.shape, axes, node.attrs.get('keepdims', False))),)


class SumOfSquares(Op):
    kind: ClassVar[str] = 'sum_of_squares'

    @classmethod
    def forward(cls, inputs, attrs, saved):
        (x,) = inputs
        return np.asarray((x * x).sum(axis=attrs.get('axis'), keepdims=attrs.get('keepdims', False)), dtype=x.dtype)

    @classmethod
    def backward(cls, grad, node):
        x = node.inputs[0].data
        axes = _normalize_axes(node.attrs.get('axis'), x.ndim)
        return (2.0 * x * _expand_reduced(grad, x.shape, axes, node.attrs.get('keepdims', False)),)


class Reshape(Op):
    kind: ClassVar[str] = 'reshape'

    @classmethod
    def forward(cls, inputs, attrs, saved):
        (x,) = inputs
        try:
            return x.reshape(attrs['shape'])
        except ValueError:
            raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(attrs['shape'])}.")

    @classmethod
    def backward(cls, grad, node):
        return (grad.reshape(node.inputs[0].shape),)


class Transpose(Op):
    kind: ClassVar[str] = 'transpose'

    @classmethod
    def forward(cls, inputs, attrs, saved):
        (x,) = inputs
        return np.transpose(x, attrs['axes'])

    @classmethod
    def backward(cls, grad, node):
        return (np.transpose(grad, np.argsort(node.attrs['axes'])),)


class Exp(Op):
    kind: ClassVar[str] = 'exp'

    @classmethod
    def forward(cls, inputs, attrs, saved):
        (x,) = inputs
        return np.exp(x)

    @classmethod
    def backward(cls, grad, node):
        return (grad * node.output.data,)


class Pick(Op):
    """Gather one entry along the last axis per leading index."""
    kind: ClassVar[str] = 'pick'

    @classmethod
    def forward(cls, inputs, attrs, saved):
        (x,) = inputs
        index = np.asarray(attrs['index'])
        if index.shape != x.shape[:-1]:
            raise ShapeError(f"pick: index shape {index.shape} does not match {x.shape[:-1]}.")
        if index.size and (index.min() < 0 or index.max() >= x.shape[-1]):
            raise ValueError(f"pick: index outside [0, {x.shape[-1]}).")
        return np.take_along_axis(x, index[..., None], axis=-1)[..., 0]

    @classmethod
    def backward(cls, grad, node):
        out = np.zeros_like(node.inputs[0].data)
        np.put_along_axis(out, np.asarray(node.attrs['index'])[..., None], grad[..., None], axis=-1)
        return (out,)


# Functions
def forward_op(kind: str, inputs: Sequence[Array], **attrs: Any) -> Array:
    """Run the operation registered as `kind` on `inputs`.

    The result is recorded on the active tape when any operand requires a
    gradient; outside a tape, operations run without recording.

    Raises:
        ValueError: For an unknown kind.
        ShapeError: When operand shapes do not fit the operation.
    """
    op = Op.lookup(kind)
    saved: dict[str, Any] = {}
    output = Array.wrap(op.forward(tuple(x.data for x in inputs), attrs, saved))
    tape = active_tape()
    if tape is not None and any(x.requires_grad for x in inputs):
        output.requires_grad = True
        tape.record(Node(op, tuple(inputs), output, attrs, saved))
    return output


def registered_kinds() -> list[str]:
    return sorted(Op._registered_ops)
