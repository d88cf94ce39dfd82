"""Reverse-mode differentiation over NumPy arrays.

A :class:`Tape` records every primitive applied to tensors that require
gradients while it is active. :meth:`Tape.backward` replays the record in
reverse and accumulates ``.grad`` on every tensor that requires it.

Ops evaluated with no active tape just compute values, which is how inference
runs.
"""

from contextlib import contextmanager

import numpy as np


class NumericError(ArithmeticError):
    """A primitive produced or received a non-finite value."""


@contextmanager
def numeric_context(label):
    """Prefix any :class:`NumericError` raised inside the block with ``label``."""
    try:
        yield
    except NumericError as exc:
        raise NumericError(f"{label}: {exc}") from None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    # Operator sugar; the implementations live in ``ops``.
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops

        return ops.div(self, other)

    def __neg__(self):
        from . import ops

        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def __getitem__(self, idx):
        from . import ops

        return ops.getitem(self, idx)

    def reshape(self, *shape):
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return ops.reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        from . import ops

        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops

        return ops.mean(self, axis=axis, keepdims=keepdims)


class _Node:
    __slots__ = ("inputs", "outputs", "backward")

    def __init__(self, inputs, outputs, backward):
        self.inputs = inputs
        self.outputs = outputs
        self.backward = backward


_STACK = []


def active_tape():
    return _STACK[-1] if _STACK else None


class Tape:
    """Ordered record of primitive applications.

    Use as a context manager around the forward pass, then call
    :meth:`backward` on a scalar tensor produced inside it.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _STACK.append(self)
        return self

    def __exit__(self, *exc):
        _STACK.remove(self)
        return False

    def record(self, inputs, outputs, backward):
        self.nodes.append(_Node(inputs, outputs, backward))

    def backward(self, loss, params=None):
        """Accumulate d(loss)/d(x) into ``x.grad`` for every tensor on the tape.

        ``params`` (an iterable of tensors) get their ``.grad`` zeroed first so
        parameters the forward pass never touched end with an exact zero.
        """
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if params is not None:
            for p in params:
                p.zero_grad()
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            gouts = [o.grad for o in node.outputs]
            if all(g is None for g in gouts):
                continue
            gouts = [np.zeros_like(o.data) if g is None else g for g, o in zip(gouts, node.outputs)]
            gins = node.backward(*gouts)
            for t, g in zip(node.inputs, gins):
                if g is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                if t.grad is None:
                    t.grad = g
                else:
                    t.grad = t.grad + g


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def record(inputs, outputs, backward):
    """Register ``outputs`` as produced from ``inputs``; marks grad requirement."""
    tape = active_tape()
    needs = any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    if tape is None or not needs:
        return
    for o in outputs:
        o.requires_grad = True
    tape.record(inputs, outputs, backward)
