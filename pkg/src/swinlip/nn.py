"""Minimal module system: parameter registration, modes, cost walk.

Every module knows how to compute its output shape and multiply-accumulate
count for an input shape without running (``cost``), which is what the cost
meter uses.  Rows are emitted per module that owns parameters or MACs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .autodiff import Tensor

INIT_STD = 0.02


@dataclass
class CostRow:
    name: str
    params: int
    macs: int
    out_shape: tuple


def _prod(shape):
    return int(np.prod(shape, dtype=np.int64))


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", False)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array):
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def modules(self):
        yield self
        for child in self._children.values():
            yield from child.modules()

    def own_param_count(self):
        return sum(p.size for p in self._params.values())

    def num_params(self):
        return sum(p.size for p in self.parameters())

    def train(self, mode=True):
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self):
        return self.train(False)

    def astype(self, dtype):
        """Cast parameters and buffers in place."""
        for m in self.modules():
            for p in m._params.values():
                p.data = p.data.astype(dtype)
            for name, b in list(m._buffers.items()):
                cast = b.astype(dtype)
                m._buffers[name] = cast
                object.__setattr__(m, name, cast)
        return self

    @property
    def dtype(self):
        for p in self.parameters():
            return p.dtype
        return np.dtype(np.float32)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def row(self, prefix, macs, out_shape):
        return CostRow(prefix.rstrip("."), self.own_param_count(), int(macs), tuple(out_shape))

    def cost(self, shape, prefix=""):
        """Return ``(rows, out_shape)`` for an input of ``shape``."""
        raise NotImplementedError(type(self).__name__)


def param(array):
    return Tensor(np.asarray(array, dtype=np.float32), requires_grad=True)


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, module):
        self._children[str(len(self._items))] = module
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class Linear(Module):
    def __init__(self, din, dout, rng, bias=True):
        super().__init__()
        self.din, self.dout = din, dout
        self.weight = param(rng.trunc_normal((din, dout), INIT_STD))
        self.bias = param(np.zeros(dout)) if bias else None

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)

    def cost(self, shape, prefix=""):
        out = tuple(shape[:-1]) + (self.dout,)
        return [self.row(prefix, _prod(shape[:-1]) * self.din * self.dout, out)], out


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.weight = param(np.ones(dim))
        self.bias = param(np.zeros(dim))

    def forward(self, x):
        return ops.layer_norm(x, self.weight, self.bias, self.eps)

    def cost(self, shape, prefix=""):
        return [self.row(prefix, 0, shape)], tuple(shape)


class BatchNorm(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.weight = param(np.ones(channels))
        self.bias = param(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels, dtype=np.float32))
        self.register_buffer("running_var", np.ones(channels, dtype=np.float32))

    def forward(self, x):
        return ops.batch_norm(x, self.weight, self.bias, self.running_mean, self.running_var,
                              self.training, self.momentum, self.eps)

    def cost(self, shape, prefix=""):
        return [self.row(prefix, 0, shape)], tuple(shape)


class PReLU(Module):
    def __init__(self, channels, init=0.25):
        super().__init__()
        self.slope = param(np.full(channels, init))

    def forward(self, x):
        return ops.prelu(x, self.slope)

    def cost(self, shape, prefix=""):
        return [self.row(prefix, 0, shape)], tuple(shape)


class ReLU(Module):
    def forward(self, x):
        return ops.relu(x)

    def cost(self, shape, prefix=""):
        return [], tuple(shape)


class Conv(Module):
    """Channels-last convolution; kernel rank sets the spatial rank."""

    def __init__(self, kernel, cin, cout, rng, stride=1, pad=0, groups=1, bias=True):
        super().__init__()
        self.kernel = tuple(kernel)
        self.cin, self.cout, self.groups = cin, cout, groups
        self.stride, self.pad = stride, pad
        self.weight = param(rng.trunc_normal(self.kernel + (cin // groups, cout), INIT_STD))
        self.bias = param(np.zeros(cout)) if bias else None

    def forward(self, x):
        return ops.conv(x, self.weight, self.bias, self.stride, self.pad, self.groups)

    def cost(self, shape, prefix=""):
        nsp = len(self.kernel)
        sp = ops.conv_output_shape(shape[-1 - nsp:-1], self.kernel, self.stride, self.pad)
        out = tuple(shape[:-1 - nsp]) + sp + (self.cout,)
        macs = _prod(out) * _prod(self.kernel) * self.cin // self.groups
        return [self.row(prefix, macs, out)], out


class DepthwiseConv1d(Module):
    """Per-channel temporal convolution over ``[*batch, T, C]``."""

    def __init__(self, channels, kernel, rng, causal=False, bias=True):
        super().__init__()
        self.kernel, self.causal = kernel, causal
        self.weight = param(rng.trunc_normal((kernel, channels), INIT_STD))
        self.bias = param(np.zeros(channels)) if bias else None

    def forward(self, x):
        return ops.dwconv1d(x, self.weight, self.bias, pad=self.kernel // 2, causal=self.causal)

    def cost(self, shape, prefix=""):
        return [self.row(prefix, _prod(shape) * self.kernel, shape)], tuple(shape)


class MaxPool(Module):
    def __init__(self, kernel, stride, pad):
        super().__init__()
        self.kernel, self.stride, self.pad = tuple(kernel), stride, pad

    def forward(self, x):
        return ops.max_pool(x, self.kernel, self.stride, self.pad)

    def cost(self, shape, prefix=""):
        nsp = len(self.kernel)
        sp = ops.conv_output_shape(shape[-1 - nsp:-1], self.kernel, self.stride, self.pad)
        out = tuple(shape[:-1 - nsp]) + sp + (shape[-1],)
        return [], out


def sequential_cost(items, shape, prefix):
    """Chain ``(name, module)`` pairs through ``cost``."""
    rows = []
    for name, mod in items:
        r, shape = mod.cost(shape, f"{prefix}{name}.")
        rows.extend(r)
    return rows, shape
