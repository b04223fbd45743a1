"""Reverse-mode autodiff tape over dense numpy arrays.

Every operation in :mod:`spikeflow.autodiff.ops` produces a ``Tensor`` that
remembers its parents and a backward closure; ``Tensor.backward()`` replays
the recorded graph once, in reverse topological order. There is no
broadcasting: shapes must match exactly except where an op defines otherwise,
so shape bugs surface at the call site.
"""

import contextlib

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not satisfy an op's contract."""


_grad_enabled = True
_strict_finite = False


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the context (pure forward passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


def set_strict_finite(flag: bool):
    """Verify every op output is finite (debug mode; costs one pass per op)."""
    global _strict_finite
    _strict_finite = bool(flag)


class Tensor:
    """Dense n-dimensional array participating in the gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_spent")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._spent = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        """Copy of the value with no tape history."""
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Populate ``grad`` on every reachable leaf with d(self)/d(leaf).

        ``self`` must be scalar (size 1) and the graph must not have been
        consumed by a previous backward call.
        """
        if self.size != 1:
            raise ValueError(f"backward() requires a scalar root, got shape {self.shape}")
        if self._spent:
            raise RuntimeError("backward() already ran on this root; rebuild the graph")
        self._spent = True

        # Iterative post-order DFS; reversed order is a valid reverse-topological order.
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"


def make_result(data, parents, backward_fn):
    """Wrap an op output, recording tape structure only when needed."""
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        out._parents = tuple(p for p in parents if p.requires_grad or p._parents)
        out._backward = backward_fn
    if _strict_finite and not np.all(np.isfinite(out.data)):
        raise FloatingPointError("non-finite values in op output")
    return out


def check_finite(t, where=""):
    """Assert every element is finite; forward ops must never emit NaN/Inf."""
    if not np.all(np.isfinite(t.data)):
        raise FloatingPointError(f"non-finite values detected {where}".strip())
    return t
