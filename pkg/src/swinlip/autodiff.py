"""Dense tensors with tape-based reverse-mode differentiation.

A :class:`Tensor` is a thin wrapper around a contiguous numpy buffer.  When a
:class:`Tape` is active (``with Tape() as tape:``) every operation that touches
a trainable leaf, or a value already produced on that tape, appends a node to
the tape.  ``tape.backward(loss)`` then walks the nodes in reverse creation
order and accumulates gradients.

Outside a tape the same functions run as plain numpy code, which is the path
used for inference and benchmarking.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, TapeError

FLOAT_TYPES = (np.dtype(np.float32), np.dtype(np.float64))

_local = threading.local()


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def record_branch(decisions):
    """Note the branch taken by a piecewise op (ReLU sign, pooling argmax).

    Only active inside :func:`branch_log`; gradient checks use it to spot
    perturbations that cross a kink.
    """
    log = getattr(_local, "branches", None)
    if log is not None:
        log.append(hash(np.ascontiguousarray(decisions).tobytes()))


class branch_log:
    """Collect :func:`record_branch` fingerprints issued inside the block."""

    def __enter__(self):
        self.saved = getattr(_local, "branches", None)
        self.entries = _local.branches = []
        return self.entries

    def __exit__(self, *exc):
        _local.branches = self.saved
        return False


def current_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """N-dimensional float array that can participate in one tape."""

    __slots__ = ("data", "requires_grad", "tape_id", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_TYPES:
            arr = arr.astype(np.float32 if dtype is None else dtype)
        if any(n < 1 for n in arr.shape):
            raise DimensionError(f"tensor extents must be >= 1, got {arr.shape}")
        # ascontiguousarray would promote rank 0 to rank 1
        self.data = arr if arr.flags.c_contiguous else arr.copy(order="C")
        self.requires_grad = requires_grad
        self.tape_id = None
        self.name = name

    # properties
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = " trainable" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __len__(self):
        return self.shape[0]

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


@dataclass
class Node:
    kind: str
    inputs: tuple
    output: Tensor
    backward: Callable


@dataclass
class Tape:
    """Ordered record of differentiable operations."""

    nodes: list = field(default_factory=list)
    gradients: dict = field(default_factory=dict)
    id: int = field(default_factory=itertools.count(1).__next__)
    _finished: bool = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().remove(self)
        return False

    def reset(self):
        self.nodes.clear()
        self.gradients = {}
        self._finished = False

    def grad(self, tensor):
        """Gradient of the last ``backward`` loss w.r.t. ``tensor``.

        Trainable tensors that did not influence the loss get zeros.
        """
        if not self._finished:
            raise TapeError("backward() has not been called on this tape")
        g = self.gradients.get(tensor)
        if g is None:
            if not tensor.requires_grad:
                raise TapeError(f"{tensor!r} is not trainable")
            g = np.zeros_like(tensor.data)
        return g

    def backward(self, loss):
        if self._finished:
            raise TapeError("backward() already ran on this tape; call reset() first")
        if loss.size != 1:
            raise TapeError(f"loss must be a scalar, got shape {loss.shape}")
        if loss.tape_id != self.id:
            raise TapeError("loss was not produced on this tape")
        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            needs = tuple(t.requires_grad or t.tape_id == self.id for t in node.inputs)
            in_grads = node.backward(g, needs)
            for t, need, gi in zip(node.inputs, needs, in_grads):
                if not need or gi is None:
                    continue
                if gi.shape != t.shape:
                    raise TapeError(f"{node.kind}: gradient shape {gi.shape} != input shape {t.shape}")
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if t.requires_grad:
                    leaves[key] = t
        self.gradients = {t: grads[k].astype(t.dtype, copy=False) for k, t in leaves.items()}
        self._finished = True
        return self.gradients


def no_tape():
    """Context manager that suspends recording inside an active tape."""
    return _Suspend()


class _Suspend:
    def __enter__(self):
        self._saved = list(_tape_stack())
        _tape_stack().clear()

    def __exit__(self, *exc):
        _tape_stack().extend(self._saved)
        return False


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def make(kind: str, data, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap an op result and record it when any input is differentiable.

    ``backward(g, needs)`` receives the output gradient and one flag per input
    and returns one gradient (or None) per input.
    """
    tape = current_tape()
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.tape_id = None
    out.name = None
    if tape is None:
        return out
    tracked = False
    for t in inputs:
        if t.tape_id is not None and t.tape_id != tape.id:
            raise TapeError("tensor belongs to a different tape")
        if t.requires_grad or t.tape_id == tape.id:
            tracked = True
    if tracked:
        out.tape_id = tape.id
        tape.nodes.append(Node(kind, tuple(inputs), out, backward))
    return out


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# elementwise arithmetic

def add(a, b):
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return make("add", a.data + b.data, (a, b),
                lambda g, n: (unbroadcast(g, sa) if n[0] else None,
                              unbroadcast(g, sb) if n[1] else None))


def sub(a, b):
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return make("sub", a.data - b.data, (a, b),
                lambda g, n: (unbroadcast(g, sa) if n[0] else None,
                              unbroadcast(-g, sb) if n[1] else None))


def mul(a, b):
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    return make("mul", ad * bd, (a, b),
                lambda g, n: (unbroadcast(g * bd, ad.shape) if n[0] else None,
                              unbroadcast(g * ad, bd.shape) if n[1] else None))


def div(a, b):
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return make("div", out, (a, b),
                lambda g, n: (unbroadcast(g / bd, ad.shape) if n[0] else None,
                              unbroadcast(-g * out / bd, bd.shape) if n[1] else None))


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def exp(x):
    out = np.exp(x.data)
    return make("exp", out, (x,), lambda g, n: (g * out,))


def log(x):
    xd = x.data
    return make("log", np.log(xd), (x,), lambda g, n: (g / xd,))


def square(x):
    xd = x.data
    return make("square", xd * xd, (x,), lambda g, n: (2.0 * g * xd,))


# reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x, axis=None, keepdims=False):
    axes = _norm_axis(axis, x.ndim)
    shape = x.shape

    def backward(g, n):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return make("sum", np.asarray(x.data.sum(axis=axes, keepdims=keepdims)), (x,), backward)


def mean(x, axis=None, keepdims=False):
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes]))
    shape = x.shape

    def backward(g, n):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, shape).copy(),)

    return make("mean", np.asarray(x.data.mean(axis=axes, keepdims=keepdims)), (x,), backward)


# shape manipulation

def reshape(x, shape):
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {src} to {tuple(shape)}") from exc
    return make("reshape", out, (x,), lambda g, n: (g.reshape(src),))


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(a % x.ndim for a in axes)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return make("transpose", out, (x,),
                lambda g, n: (np.ascontiguousarray(g.transpose(inverse)),))


def swapaxes(x, a, b):
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, axes)


def getitem(x, index):
    shape = x.shape

    def backward(g, n):
        full = np.zeros(shape, dtype=g.dtype)
        if _is_advanced(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return make("getitem", np.ascontiguousarray(x.data[index]), (x,), backward)


def _is_advanced(index):
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def take(x, indices, axis):
    """Gather ``x`` along ``axis`` with an integer index array."""
    indices = np.asarray(indices)
    axis = axis % x.ndim
    shape = x.shape

    def backward(g, n):
        full = np.zeros(shape, dtype=g.dtype)
        # move gather axis first so np.add.at can scatter whole slabs
        gm = np.moveaxis(g, tuple(range(axis, axis + indices.ndim)),
                         tuple(range(indices.ndim)))
        fm = np.moveaxis(full, axis, 0)
        np.add.at(fm, indices, gm)
        return (full,)

    return make("take", np.take(x.data, indices, axis=axis), (x,), backward)


def concat(tensors, axis=-1):
    tensors = list(tensors)
    axis = axis % tensors[0].ndim
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g, n):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, sizes, axis=axis))

    return make("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def pad(x, widths):
    """Zero padding; ``widths`` is a per-axis list of (before, after)."""
    widths = [tuple(w) for w in widths]
    slices = tuple(slice(b, b + s) for (b, _), s in zip(widths, x.shape))
    return make("pad", np.pad(x.data, widths), (x,),
                lambda g, n: (np.ascontiguousarray(g[slices]),))


def roll(x, shifts, axes):
    shifts, axes = tuple(shifts), tuple(axes)
    back = tuple(-s for s in shifts)
    return make("roll", np.roll(x.data, shifts, axes), (x,),
                lambda g, n: (np.roll(g, back, axes),))


# linear algebra

def matmul(a, b):
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    try:
        out = ad @ bd
    except ValueError as exc:
        raise DimensionError(f"matmul batch dims do not broadcast: {a.shape} @ {b.shape}") from exc

    def backward(g, n):
        ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if n[0] else None
        gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if n[1] else None
        return ga, gb

    return make("matmul", out, (a, b), backward)
