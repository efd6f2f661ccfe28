"""Dense float32 tensors with a reverse-mode gradient tape."""
from __future__ import annotations

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


class Tensor:
    """Immutable float32 array plus the graph bookkeeping needed for backprop.

    ``op`` names the operation that produced the tensor, ``parents`` are its
    inputs and ``_backward`` maps the output gradient to one gradient per
    parent (``None`` for parents that do not need one).
    """

    __slots__ = ("data", "grad", "requires_grad", "parents", "op", "_backward", "__weakref__")

    def __init__(self, data, requires_grad=False, parents=(), op="leaf", backward=None):
        arr = np.ascontiguousarray(data, dtype=np.float32)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite values produced by '{op}'")
        arr.flags.writeable = False
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.parents = tuple(parents)
        self.op = op
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return np.array(self.data)

    def __repr__(self):
        return f"Tensor(shape={list(self.shape)}, op={self.op!r}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        from .ops import add
        return add(self, other)

    def __sub__(self, other):
        from .ops import sub
        return sub(self, other)

    def __mul__(self, other):
        from .ops import mul
        return mul(self, other)

    def backward(self):
        backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, op, backward):
    """Build an op output; it tracks gradients only if some input does."""
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, parents=parents if needs else (), op=op,
                  backward=backward if needs else None)


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Populate ``.grad`` on every tensor in ``loss``'s graph that requires it.

    Gradients are recomputed from scratch on each call (no accumulation across
    calls).
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor that requires grad")
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g
        if node._backward is None:
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                raise RuntimeError(f"gradient shape {pg.shape} != value shape {parent.shape} in '{node.op}'")
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
