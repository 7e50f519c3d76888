"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation that touches a tensor with ``requires_grad=True`` records its
inputs and a local gradient rule on the output tensor.  ``backward`` orders
the recorded graph topologically (the tape) and walks it once in reverse.
"""

from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass, field

import numpy as np

from cwat.errors import UsageError

_grad_enabled = contextvars.ContextVar("cwat_grad_enabled", default=True)


def is_grad_enabled():
    return _grad_enabled.get()


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation, frozen encoders)."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class Tensor:
    """Row-major contiguous float64 array that may take part in a gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_rule", "_consumed")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64, order="C", copy=True)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._rule = None
        self._consumed = False

    @classmethod
    def _result(cls, data, parents, rule):
        """Wrap an op output; record ``rule`` only if some parent needs a gradient."""
        out = cls.__new__(cls)
        out.data = np.ascontiguousarray(data, dtype=np.float64)
        out.grad = None
        out.name = None
        out._consumed = False
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._rule = rule
        else:
            out.requires_grad = False
            out._parents = ()
            out._rule = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data.copy()

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; the rules live in ops
    def __add__(self, other):
        from cwat.numerics import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from cwat.numerics import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from cwat.numerics import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from cwat.numerics import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from cwat.numerics import ops
        return ops.div(self, other)

    def __neg__(self):
        from cwat.numerics import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from cwat.numerics import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from cwat.numerics import ops
        return ops.getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        from cwat.numerics import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from cwat.numerics import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from cwat.numerics import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass
class Tape:
    """Recorded operations reachable from a loss, inputs before outputs."""

    nodes: list = field(default_factory=list)

    @classmethod
    def from_loss(cls, loss):
        order = []
        seen = set()
        stack = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)


def backward(loss):
    """Populate ``.grad`` on every tensor that ``loss`` depends on.

    Leaf gradients accumulate across calls (reset them with ``zero_grad``);
    the intermediate graph is released afterwards, so calling ``backward``
    twice on the same forward pass raises ``UsageError``.
    """
    if not isinstance(loss, Tensor):
        raise UsageError("backward expects a Tensor")
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise UsageError("backward was already run on this graph; rebuild the forward pass")
    if not loss.requires_grad:
        raise UsageError("loss is not connected to any tensor that requires grad")

    tape = Tape.from_loss(loss)
    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        node.grad = g
        grads = node._rule(g)
        for parent, pg in zip(node._parents, grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg
    for node in tape.nodes:
        if not node.is_leaf:
            node._parents = ()
            node._rule = None
            node._consumed = True
    return tape
