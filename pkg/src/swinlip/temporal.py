"""Conformer-style temporal blocks over the per-frame feature sequence.

Each block is ``y' = g + FFN(g)/2``, ``y'' = y' + MHSA(y')``,
``y''' = y'' + Conv(y'')``, ``y = LN(y''' + FFN(y''')/2)``.  The convolution
sub-module has no normalisation after its depthwise convolution.  In the
streaming variant the MHSA sub-module does not exist and the depthwise
convolution is causal, so output ``t`` depends only on frames ``<= t``.
"""

from __future__ import annotations

import numpy as np

from . import nn, ops
from .autodiff import Tensor, add, mul, reshape, take, transpose
from .config import TemporalBlockConfig
from .errors import ConfigError


class FeedForward(nn.Module):
    """LN -> linear -> Swish -> dropout -> linear (caller scales by 1/2)."""

    def __init__(self, dim, hidden, rng, dropout=0.0, noise=None):
        super().__init__()
        self.dropout, self.noise = dropout, noise
        self.norm = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, hidden, rng)
        self.fc2 = nn.Linear(hidden, dim, rng)

    def forward(self, y):
        h = ops.swish(self.fc1(self.norm(y)))
        h = ops.dropout(h, self.dropout, self.noise, self.training)
        return self.fc2(h)

    def cost(self, shape, prefix=""):
        return nn.sequential_cost([("norm", self.norm), ("fc1", self.fc1), ("fc2", self.fc2)],
                                  shape, prefix)


def sinusoid_relative(length, dim, dtype=np.float32):
    """Sinusoidal embeddings of displacements ``T-1, ..., -(T-1)`` -> ``[2T-1, dim]``."""
    pos = np.arange(length - 1, -length, -1, dtype=np.float64)[:, None]
    freq = np.exp(-np.log(10000.0) * np.arange(0, dim, 2, dtype=np.float64) / dim)
    pe = np.zeros((2 * length - 1, dim))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)
    return pe.astype(dtype)


def relative_gather_index(length):
    """Flat index picking displacement ``i - j`` out of ``[T, 2T-1]`` rows."""
    i = np.arange(length)[:, None]
    j = np.arange(length)[None, :]
    return i * (2 * length - 1) + (length - 1 - i + j)


class RelPositionMHSA(nn.Module):
    """LN -> self-attention over time with relative positional scores.

    Scores are ``((q + u) k^T + (q + v) p^T) / sqrt(d)`` where ``p`` is a
    learned projection of sinusoidal displacement embeddings and ``u``,
    ``v`` are learned per-head bias vectors.
    """

    def __init__(self, dim, heads, rng, dropout=0.0, noise=None):
        super().__init__()
        self.dim, self.heads, self.head_dim = dim, heads, dim // heads
        self.dropout, self.noise = dropout, noise
        self.norm = nn.LayerNorm(dim)
        self.q = nn.Linear(dim, dim, rng)
        self.k = nn.Linear(dim, dim, rng)
        self.v = nn.Linear(dim, dim, rng)
        self.out = nn.Linear(dim, dim, rng)
        self.pos = nn.Linear(dim, dim, rng, bias=False)
        self.pos_bias_u = nn.param(rng.trunc_normal((heads, self.head_dim), nn.INIT_STD))
        self.pos_bias_v = nn.param(rng.trunc_normal((heads, self.head_dim), nn.INIT_STD))

    def _heads(self, x):
        *lead, t, _ = x.shape
        x = reshape(x, tuple(lead) + (t, self.heads, self.head_dim))
        n = len(lead)
        return transpose(x, tuple(range(n)) + (n + 1, n, n + 2))

    def attention_weights(self, y):
        *lead, t, c = y.shape
        x = self.norm(y)
        q, k, v = self._heads(self.q(x)), self._heads(self.k(x)), self._heads(self.v(x))
        pe = Tensor(sinusoid_relative(t, c, y.dtype))
        p = transpose(reshape(self.pos(pe), (2 * t - 1, self.heads, self.head_dim)), (1, 0, 2))
        u = reshape(self.pos_bias_u, (self.heads, 1, self.head_dim))
        w = reshape(self.pos_bias_v, (self.heads, 1, self.head_dim))
        kt = transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))
        content = add(q, u) @ kt
        full = add(q, w) @ transpose(p, (0, 2, 1))
        flat = reshape(full, tuple(full.shape[:-2]) + (t * (2 * t - 1),))
        position = take(flat, relative_gather_index(t), axis=-1)
        scores = mul(add(content, position), self.head_dim ** -0.5)
        return ops.softmax(scores, axis=-1), v

    def forward(self, y):
        *lead, t, c = y.shape
        attn, v = self.attention_weights(y)
        o = attn @ v
        n = len(lead)
        o = reshape(transpose(o, tuple(range(n)) + (n + 1, n, n + 2)), tuple(lead) + (t, c))
        return ops.dropout(self.out(o), self.dropout, self.noise, self.training)

    def cost(self, shape, prefix=""):
        *lead, t, c = shape
        b = int(np.prod(lead, dtype=np.int64))
        rows = []
        for name in ("norm", "q", "k", "v"):
            r, _ = getattr(self, name).cost(shape, f"{prefix}{name}.")
            rows += r
        r, _ = self.pos.cost((2 * t - 1, c), f"{prefix}pos.")
        rows += r
        d, h = self.head_dim, self.heads
        # content scores, positional scores over 2T-1 offsets, weighted values
        macs = b * h * d * (t * t + t * (2 * t - 1) + t * t)
        rows.append(self.row(prefix, macs, tuple(lead) + (h, t, t)))
        r, out = self.out.cost(shape, f"{prefix}out.")
        return rows + r, out


class ConvModule(nn.Module):
    """LN -> pointwise 2x -> GLU -> depthwise conv -> Swish -> pointwise -> dropout."""

    def __init__(self, dim, kernel, rng, causal=False, expansion=2, dropout=0.0, noise=None):
        super().__init__()
        if kernel % 2 == 0:
            raise ConfigError(f"depthwise kernel must be odd, got {kernel}")
        self.dropout, self.noise = dropout, noise
        self.norm = nn.LayerNorm(dim)
        self.pw1 = nn.Linear(dim, expansion * dim, rng)
        self.dw = nn.DepthwiseConv1d(dim, kernel, rng, causal=causal)
        self.pw2 = nn.Linear(dim, dim, rng)

    def forward(self, y):
        h = ops.glu(self.pw1(self.norm(y)), axis=-1)
        h = ops.swish(self.dw(h))
        return ops.dropout(self.pw2(h), self.dropout, self.noise, self.training)

    def cost(self, shape, prefix=""):
        rows, s = nn.sequential_cost([("norm", self.norm), ("pw1", self.pw1)], shape, prefix)
        s = tuple(s[:-1]) + (s[-1] // 2,)
        r, s = nn.sequential_cost([("dw", self.dw), ("pw2", self.pw2)], s, prefix)
        return rows + r, s


class ConvAttentionBlock(nn.Module):
    def __init__(self, cfg: TemporalBlockConfig, rng, noise=None):
        super().__init__()
        self.streaming = cfg.streaming
        p = cfg.dropout
        self.ffn1 = FeedForward(cfg.dim, cfg.ffn_hidden, rng, p, noise)
        self.mhsa = None if cfg.streaming else RelPositionMHSA(cfg.dim, cfg.heads, rng, p, noise)
        self.conv = ConvModule(cfg.dim, cfg.dw_kernel, rng, causal=cfg.streaming,
                               expansion=cfg.conv_expansion, dropout=p, noise=noise)
        self.ffn2 = FeedForward(cfg.dim, cfg.ffn_hidden, rng, p, noise)
        self.norm = nn.LayerNorm(cfg.dim)

    def forward(self, g):
        y = add(g, mul(self.ffn1(g), 0.5))
        if self.mhsa is not None:
            y = add(y, self.mhsa(y))
        y = add(y, self.conv(y))
        return self.norm(add(y, mul(self.ffn2(y), 0.5)))

    def cost(self, shape, prefix=""):
        items = [("ffn1", self.ffn1)]
        if self.mhsa is not None:
            items.append(("mhsa", self.mhsa))
        items += [("conv", self.conv), ("ffn2", self.ffn2), ("norm", self.norm)]
        return nn.sequential_cost(items, shape, prefix)


class TemporalModule(nn.Module):
    """``[*lead, T, C]`` -> ``[*lead, T, C]`` through ``cfg.blocks`` blocks."""

    def __init__(self, cfg: TemporalBlockConfig, rng, noise=None):
        super().__init__()
        self.cfg = cfg
        self.blocks = nn.ModuleList(ConvAttentionBlock(cfg, rng, noise) for _ in range(cfg.blocks))

    def forward(self, g):
        for blk in self.blocks:
            g = blk(g)
        return g

    def cost(self, shape, prefix=""):
        return nn.sequential_cost([(f"blocks.{i}", b) for i, b in enumerate(self.blocks)], shape, prefix)

