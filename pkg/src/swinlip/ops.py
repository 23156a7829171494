"""Neural-network operators on :class:`~swinlip.autodiff.Tensor`.

Layout is channels-last throughout: a convolution input is
``[*batch, *spatial, C]`` and a kernel is ``[*k, C // groups, Cout]``.
Convolutions are cross-correlations (no kernel flip).
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .autodiff import (as_tensor, getitem, make, mean, record_branch, reshape, square, sub,
                       unbroadcast)
from .errors import ConfigError, DimensionError

# im2col buffers above this many elements are built chunk by chunk
IM2COL_BUDGET = 1 << 24


def linear(x, weight, bias=None):
    """``x @ weight + bias`` with ``weight`` stored as ``[in, out]``."""
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    lead = xd.shape[:-1]
    x2 = xd.reshape(-1, xd.shape[-1])
    out = x2 @ wd
    if bias is not None:
        out += bias.data
    out = out.reshape(*lead, wd.shape[1])

    def backward(g, n):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ wd.T).reshape(xd.shape) if n[0] else None
        gw = x2.T @ g2 if n[1] else None
        gb = g2.sum(axis=0) if len(n) > 2 and n[2] else None
        return (gx, gw, gb)[: len(n)]

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make("linear", out, inputs, backward)


# convolution

def _pads(pad, nsp):
    if isinstance(pad, int):
        pad = (pad,) * nsp
    out = []
    for p in pad:
        out.append((p, p) if isinstance(p, int) else tuple(p))
    if len(out) != nsp:
        raise ConfigError(f"padding {pad} does not cover {nsp} spatial axes")
    return out


def _tuple(v, nsp):
    return (v,) * nsp if isinstance(v, int) else tuple(v)


def conv_output_shape(in_spatial, kernel, stride, pad):
    """Per-axis ``floor((in + before + after - k) / s) + 1``."""
    pads = _pads(pad, len(in_spatial))
    stride = _tuple(stride, len(in_spatial))
    out = []
    for n, k, s, (pb, pa) in zip(in_spatial, kernel, stride, pads):
        o = (n + pb + pa - k) // s + 1 if n + pb + pa >= k else 0
        if o < 1:
            raise ConfigError(
                f"kernel {tuple(kernel)} with stride {stride} and padding {pads} "
                f"does not fit input extent {tuple(in_spatial)}")
        out.append(o)
    return tuple(out)


class _ConvGeometry:
    def __init__(self, xshape, wshape, stride, pad, groups):
        nsp = len(wshape) - 2
        self.nsp = nsp
        self.nbatch = len(xshape) - nsp - 1
        if self.nbatch < 0:
            raise DimensionError(f"conv: input {xshape} has fewer than {nsp + 1} axes")
        self.kernel = tuple(wshape[:nsp])
        cin = xshape[-1]
        if cin % groups:
            raise DimensionError(f"conv: {cin} input channels not divisible by groups={groups}")
        if wshape[nsp] * groups != cin:
            raise DimensionError(f"conv: kernel {wshape} expects {wshape[nsp] * groups} "
                                 f"input channels, input has {cin}")
        if wshape[-1] % groups:
            raise DimensionError(f"conv: {wshape[-1]} output channels not divisible by groups={groups}")
        self.cin, self.cout, self.groups = cin, wshape[-1], groups
        self.stride = _tuple(stride, nsp)
        self.pads = _pads(pad, nsp)
        self.batch = tuple(xshape[: self.nbatch])
        self.in_spatial = tuple(xshape[self.nbatch:-1])
        self.out_spatial = conv_output_shape(self.in_spatial, self.kernel, self.stride, self.pads)
        self.ktaps = int(np.prod(self.kernel))
        self.out_shape = self.batch + self.out_spatial + (self.cout,)

    def padded(self, xd):
        widths = [(0, 0)] * self.nbatch + list(self.pads) + [(0, 0)]
        return np.pad(xd, widths) if any(p != (0, 0) for p in self.pads) else xd

    def chunks(self):
        """Split output positions along the first spatial axis to bound im2col memory."""
        per_row = (int(np.prod(self.batch, dtype=np.int64)) * int(np.prod(self.out_spatial[1:], dtype=np.int64))
                   * self.ktaps * self.cin)
        rows = self.out_spatial[0]
        step = max(1, min(rows, IM2COL_BUDGET // max(per_row, 1)))
        return [(a, min(a + step, rows)) for a in range(0, rows, step)]

    def cols(self, xp, a, b):
        """im2col for output rows ``[a, b)``: shape ``[M, ktaps, cin]``."""
        nb, s0, k0 = self.nbatch, self.stride[0], self.kernel[0]
        lo, hi = a * s0, (b - 1) * s0 + k0
        block = xp[(slice(None),) * nb + (slice(lo, hi),)]
        axes = tuple(range(nb, nb + self.nsp))
        win = sliding_window_view(block, self.kernel, axis=axes)
        # win: [*batch, *positions, cin, *kernel]; keep strided positions
        sel = (slice(None),) * nb + tuple(slice(None, None, s) for s in self.stride)
        win = win[sel]
        win = win[(slice(None),) * nb + tuple(slice(0, o) for o in (b - a,) + self.out_spatial[1:])]
        nd = win.ndim
        order = tuple(range(nb + self.nsp)) + tuple(range(nd - self.nsp, nd)) + (nb + self.nsp,)
        win = win.transpose(order)
        return win.reshape(-1, self.ktaps, self.cin)

    def scatter(self, dxp, dcols, a, b):
        """Accumulate ``dcols`` (``[*batch, rows, *rest, *kernel, cin]``) into ``dxp``."""
        nb = self.nbatch
        shape = self.batch + (b - a,) + self.out_spatial[1:] + self.kernel + (self.cin,)
        dcols = dcols.reshape(shape)
        outs = (b - a,) + self.out_spatial[1:]
        base = a * self.stride[0]
        for tap in itertools.product(*(range(k) for k in self.kernel)):
            sl = []
            for ax, (t, s, o) in enumerate(zip(tap, self.stride, outs)):
                start = t + (base if ax == 0 else 0)
                sl.append(slice(start, start + (o - 1) * s + 1, s))
            dxp[(slice(None),) * nb + tuple(sl)] += dcols[(slice(None),) * (nb + self.nsp) + tap]


def _group_matmul(cols, w, geo):
    """cols ``[M, K, Cin]`` x kernel -> ``[M, Cout]``."""
    g = geo.groups
    if g == 1:
        return cols.reshape(cols.shape[0], -1) @ w.reshape(-1, geo.cout)
    cg, og = geo.cin // g, geo.cout // g
    c = cols.reshape(cols.shape[0], geo.ktaps, g, cg)
    wk = w.reshape(geo.ktaps, cg, g, og)
    return np.einsum("mkgc,kcgo->mgo", c, wk, optimize=True).reshape(cols.shape[0], geo.cout)


def conv(x, weight, bias=None, stride=1, pad=0, groups=1):
    """N-d grouped convolution; the kernel rank fixes the spatial rank."""
    geo = _ConvGeometry(x.shape, weight.shape, stride, pad, groups)
    xd, wd = x.data, weight.data
    xp = geo.padded(xd)
    out = np.empty(geo.out_shape, dtype=np.result_type(xd, wd))
    nb = geo.nbatch
    for a, b in geo.chunks():
        cols = geo.cols(xp, a, b)
        res = _group_matmul(cols, wd, geo)
        out[(slice(None),) * nb + (slice(a, b),)] = res.reshape(
            geo.batch + (b - a,) + geo.out_spatial[1:] + (geo.cout,))
    if bias is not None:
        out += bias.data

    def backward(g, n):
        gw = np.zeros_like(wd) if n[1] else None
        dxp = np.zeros(xp.shape, dtype=g.dtype) if n[0] else None
        gcnt = geo.groups
        cg, og = geo.cin // gcnt, geo.cout // gcnt
        for a, b in geo.chunks():
            gc = g[(slice(None),) * nb + (slice(a, b),)].reshape(-1, geo.cout)
            if n[1]:
                cols = geo.cols(xp, a, b)
                if gcnt == 1:
                    gw += (cols.reshape(cols.shape[0], -1).T @ gc).reshape(wd.shape)
                else:
                    c = cols.reshape(cols.shape[0], geo.ktaps, gcnt, cg)
                    gg = gc.reshape(-1, gcnt, og)
                    gw += np.einsum("mkgc,mgo->kcgo", c, gg, optimize=True).reshape(wd.shape)
            if n[0]:
                if gcnt == 1:
                    dcols = gc @ wd.reshape(-1, geo.cout).T
                else:
                    wk = wd.reshape(geo.ktaps, cg, gcnt, og)
                    dcols = np.einsum("mgo,kcgo->mkgc", gc.reshape(-1, gcnt, og), wk, optimize=True)
                geo.scatter(dxp, dcols, a, b)
        gx = None
        if n[0]:
            crop = (slice(None),) * nb + tuple(slice(pb, pb + s) for (pb, _), s in zip(geo.pads, geo.in_spatial))
            gx = np.ascontiguousarray(dxp[crop])
        gb = g.reshape(-1, geo.cout).sum(axis=0) if len(n) > 2 and n[2] else None
        return (gx, gw, gb)[: len(n)]

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make(f"conv{geo.nsp}d", out, inputs, backward)


def conv3d(x, weight, bias=None, stride=1, pad=0):
    if weight.ndim != 5:
        raise DimensionError(f"conv3d kernel must be [kT,kH,kW,Cin,Cout], got {weight.shape}")
    return conv(x, weight, bias, stride, pad)


def conv2d(x, weight, bias=None, stride=1, pad=0, groups=1):
    if weight.ndim != 4:
        raise DimensionError(f"conv2d kernel must be [kH,kW,Cin,Cout], got {weight.shape}")
    return conv(x, weight, bias, stride, pad, groups)


def dwconv1d(x, weight, bias=None, pad=0, causal=False):
    """Depthwise temporal convolution over ``[*batch, T, C]``.

    ``weight`` is ``[k, C]``.  ``causal`` left-pads by ``k - 1`` so output
    ``t`` only sees inputs ``<= t``.
    """
    k, c = weight.shape
    if x.shape[-1] != c:
        raise DimensionError(f"dwconv1d: input {x.shape} vs kernel {weight.shape}")
    if causal:
        pad = ((k - 1, 0),)
    return conv(x, reshape(weight, (k, 1, c)), bias, 1, pad, groups=c)


def max_pool(x, kernel, stride, pad):
    """Max pooling over the spatial axes implied by ``kernel``; pads with -inf."""
    nsp = len(kernel)
    nb = x.ndim - nsp - 1
    pads = _pads(pad, nsp)
    stride = _tuple(stride, nsp)
    xd = x.data
    widths = [(0, 0)] * nb + pads + [(0, 0)]
    xp = np.pad(xd, widths, constant_values=-np.inf)
    in_spatial = xd.shape[nb:-1]
    outs = conv_output_shape(in_spatial, kernel, stride, pads)
    axes = tuple(range(nb, nb + nsp))
    win = sliding_window_view(xp, kernel, axis=axes)
    win = win[(slice(None),) * nb + tuple(slice(None, None, s) for s in stride)]
    win = win[(slice(None),) * nb + tuple(slice(0, o) for o in outs)]
    flat = win.reshape(win.shape[: nb + nsp + 1] + (-1,))
    arg = flat.argmax(axis=-1)
    record_branch(arg)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g, n):
        dxp = np.zeros(xp.shape, dtype=g.dtype)
        offs = np.unravel_index(arg, kernel)
        idx = []
        for ax in range(nb + nsp + 1):
            ar = np.arange(out.shape[ax]).reshape([-1 if i == ax else 1 for i in range(out.ndim)])
            if nb <= ax < nb + nsp:
                j = ax - nb
                ar = ar * stride[j] + offs[j]
            idx.append(np.broadcast_to(ar, out.shape))
        np.add.at(dxp, tuple(idx), g)
        crop = (slice(None),) * nb + tuple(slice(pb, pb + s) for (pb, _), s in zip(pads, in_spatial))
        return (np.ascontiguousarray(dxp[crop]),)

    return make("max_pool", np.ascontiguousarray(out), (x,), backward)


# normalisation

def layer_norm(x, weight=None, bias=None, eps=1e-5):
    """Normalise the last axis, then apply the learnable scale and offset."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat
    if weight is not None:
        out = out * weight.data
    if bias is not None:
        out = out + bias.data
    c = xd.shape[-1]

    def backward(g, n):
        gxhat = g * weight.data if weight is not None else g
        res = []
        if n[0]:
            gx = rstd * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                         - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
            res.append(gx)
        else:
            res.append(None)
        if weight is not None:
            res.append((g * xhat).reshape(-1, c).sum(axis=0) if n[1] else None)
        if bias is not None:
            res.append(g.reshape(-1, c).sum(axis=0) if n[-1] else None)
        return tuple(res)

    inputs = [x] + [t for t in (weight, bias) if t is not None]
    return make("layer_norm", out.astype(xd.dtype, copy=False), inputs, backward)


def batch_norm(x, weight, bias, running_mean, running_var, training,
               momentum=0.1, eps=1e-5):
    """Per-channel normalisation over every axis but the last.

    In training mode the batch statistics are used and the running buffers
    (plain numpy arrays) are updated in place with ``momentum``.
    """
    xd = x.data
    c = xd.shape[-1]
    x2 = xd.reshape(-1, c)
    if training:
        mu = x2.mean(axis=0)
        var = x2.var(axis=0)
        count = x2.shape[0]
        unbiased = var * count / max(count - 1, 1)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mu, var = running_mean, running_var
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x2 - mu) * rstd
    out = (xhat * weight.data + bias.data).reshape(xd.shape).astype(xd.dtype, copy=False)

    def backward(g, n):
        g2 = g.reshape(-1, c)
        gxhat = g2 * weight.data
        gx = None
        if n[0]:
            if training:
                gx = rstd * (gxhat - gxhat.mean(axis=0) - xhat * (gxhat * xhat).mean(axis=0))
            else:
                gx = gxhat * rstd
            gx = gx.reshape(xd.shape)
        gw = (g2 * xhat).sum(axis=0) if n[1] else None
        gb = g2.sum(axis=0) if n[2] else None
        return gx, gw, gb

    return make("batch_norm", out, (x, weight, bias), backward)


# activations

def relu(x):
    xd = x.data
    mask = xd > 0
    record_branch(mask)
    return make("relu", xd * mask, (x,), lambda g, n: (g * mask,))


def prelu(x, slope):
    """Parametric ReLU with one slope per channel (last axis)."""
    xd, sd = x.data, slope.data
    neg = xd < 0
    record_branch(neg)
    out = np.where(neg, xd * sd, xd)

    def backward(g, n):
        gx = np.where(neg, g * sd, g) if n[0] else None
        gs = unbroadcast(np.where(neg, g * xd, 0.0), sd.shape) if n[1] else None
        return gx, gs

    return make("prelu", out, (x, slope), backward)


_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    """Exact (erf-based) GELU."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _SQRT1_2))
    out = (xd * cdf).astype(xd.dtype, copy=False)

    def backward(g, n):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return make("gelu", out, (x,), backward)


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def sigmoid(x):
    s = _sigmoid(x.data)
    return make("sigmoid", s, (x,), lambda g, n: (g * s * (1.0 - s),))


def swish(x):
    xd = x.data
    s = _sigmoid(xd)
    return make("swish", xd * s, (x,), lambda g, n: (g * (s + xd * s * (1.0 - s)),))


def glu(x, axis=-1):
    """``a * sigmoid(b)`` where ``a, b`` are the two halves of ``axis``."""
    c = x.shape[axis]
    if c % 2:
        raise DimensionError(f"glu needs an even extent on axis {axis}, got {c}")
    a, b = np.split(x.data, 2, axis=axis)
    s = _sigmoid(b)

    def backward(g, n):
        return (np.concatenate([g * s, g * a * s * (1.0 - s)], axis=axis),)

    return make("glu", a * s, (x,), backward)


def softmax(x, axis=-1):
    xd = x.data
    z = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g, n):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make("softmax", y, (x,), backward)


def log_softmax(x, axis=-1):
    xd = x.data
    z = xd - xd.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    y = np.exp(out)

    def backward(g, n):
        return (g - y * g.sum(axis=axis, keepdims=True),)

    return make("log_softmax", out, (x,), backward)


def dropout(x, rate, rng=None, training=False):
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an Rng")
    keep = (rng.uniform(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return make("dropout", x.data * keep, (x,), lambda g, n: (g * keep,))


# losses

def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under ``logits [N, K]``."""
    labels = np.asarray(labels)
    lp = log_softmax(logits, axis=-1)
    picked = getitem(lp, (np.arange(labels.shape[0]), labels))
    return -mean(picked)


def mse_loss(pred, target):
    return mean(square(sub(pred, as_tensor(target, like=pred))))
