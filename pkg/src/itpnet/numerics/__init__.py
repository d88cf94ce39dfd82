from . import ops
from .gradcheck import GradCheckReport, grad_check
from .layers import feed_forward, lstm_step, self_attention
from .optim import AdamState, adam_update
from .tape import NumericError, Tape, Tensor, numeric_context

smooth_l1 = ops.smooth_l1

__all__ = [
    "AdamState",
    "GradCheckReport",
    "NumericError",
    "Tape",
    "Tensor",
    "adam_update",
    "feed_forward",
    "grad_check",
    "lstm_step",
    "numeric_context",
    "ops",
    "self_attention",
    "smooth_l1",
]
