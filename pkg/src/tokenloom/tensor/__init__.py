"""The differentiable compute layer: arrays, tape, operations, optimizer, checkpoints."""
from tokenloom.tensor.tape import Array, Node, Tape, active_tape, as_array, backward, current_dtype, precision
from tokenloom.tensor.ops import ATTENTION_MASK_VALUE, Op, forward_op, registered_kinds
from tokenloom.tensor import functional
from tokenloom.tensor.gradcheck import GradCheckReport, check_gradients, numerical_gradient
from tokenloom.tensor.optim import AdamW, clip_grad_norm, cosine_lr

__ALL__ = [
    "Array", "Node", "Tape", "active_tape", "as_array", "backward", "current_dtype", "precision",
    "ATTENTION_MASK_VALUE", "Op", "forward_op", "registered_kinds", "functional",
    "GradCheckReport", "check_gradients", "numerical_gradient", "AdamW", "clip_grad_norm", "cosine_lr",
]
