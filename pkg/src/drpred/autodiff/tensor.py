"""Tensor and computation-tape primitives.

Single-threaded by design: ops append nodes to the innermost active Tape
in creation order, which is already a topological order, so the backward
pass is a single reversed sweep over the node list.
"""

from __future__ import annotations

import numpy as np

from drpred.errors import DimensionError

DEFAULT_DTYPE = np.float32

# Stack of active tapes; ops record onto the top one. Empty stack means
# inference mode: values are computed but nothing is recorded.
_TAPE_STACK: list["Tape"] = []


def grad_enabled() -> bool:
    return bool(_TAPE_STACK)


def active_tape() -> "Tape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """Dense numeric array participating in reverse-mode autodiff.

    `values` is a C-contiguous numpy buffer (float32 by default, float64
    for gradient checking). `grad` is allocated lazily during backward
    and always matches `values` in shape and dtype.
    """

    __slots__ = ("values", "requires_grad", "grad", "name")

    def __init__(self, values, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(values, dtype=dtype or DEFAULT_DTYPE)
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        if g.shape != self.values.shape:
            raise DimensionError(
                f"gradient shape {g.shape} does not match tensor shape {self.values.shape}"
            )
        if self.grad is None:
            self.grad = g.astype(self.values.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.values.shape}, dtype={self.values.dtype}{tag})"


class Node:
    """One recorded operation: output tensor plus its adjoint closure."""

    __slots__ = ("op", "out", "parents", "backward_fn")

    def __init__(self, op, out, parents, backward_fn):
        self.op = op
        self.out = out
        self.parents = parents
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of operations for one forward pass.

    Usable as a context manager; nesting pushes a fresh tape so inner
    recordings never leak into the outer graph.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted"
        return False

    def record(self, op, out, parents, backward_fn):
        self.nodes.append(Node(op, out, parents, backward_fn))

    def backward(self, loss: Tensor):
        """Run the reverse sweep, accumulating grads into leaf tensors.

        Nodes whose output never received a gradient are skipped: they
        do not lie on any path from `loss`.
        """
        if loss.values.size != 1:
            raise DimensionError("backward expects a scalar loss tensor")
        loss.grad = np.ones_like(loss.values)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            node.backward_fn(g)
