"""Per-frame hierarchical shifted-window encoder.

Each frame of the stem output is cut into P x P patches, projected to C
channels, and passed through stages of window / shifted-window attention
blocks.  Every stage ends in a 2 x 2 patch merge (grid halves, channels
double), so the 88 x 88 SwinLip input goes 8x8@64 -> 4x4@128 -> 2x2@256 ->
1x1@512 and is then mean-pooled to one 512-vector per frame.

All tensors are channels-last with arbitrary leading (frame/batch) axes.
"""

from __future__ import annotations

import numpy as np

from . import nn, ops
from .autodiff import add, concat, getitem, mean, mul, reshape, roll, take, transpose
from .config import ModelConfig, effective_window
from .errors import ConfigError, DimensionError

MASK_VALUE = -1e4


# window geometry

def window_partition(x, window):
    """``[*lead, h, w, C]`` -> ``[prod(lead) * nW, M*M, C]``."""
    *lead, h, w, c = x.shape
    if h % window or w % window:
        raise ConfigError(f"grid {h}x{w} is not divisible by window {window}")
    m = window
    x = reshape(x, (-1, h // m, m, w // m, m, c))
    x = transpose(x, (0, 1, 3, 2, 4, 5))
    return reshape(x, (-1, m * m, c))


def window_reverse(windows, window, h, w, lead=()):
    """Inverse of :func:`window_partition`."""
    m = window
    c = windows.shape[-1]
    x = reshape(windows, (-1, h // m, w // m, m, m, c))
    x = transpose(x, (0, 1, 3, 2, 4, 5))
    return reshape(x, tuple(lead) + (h, w, c))


def cyclic_shift(x, shift):
    """Roll the grid axes by ``-shift``; ``cyclic_shift(x, -s)`` undoes it."""
    if shift == 0:
        return x
    return roll(x, (-shift, -shift), (-3, -2))


def build_shift_mask(h, w, window, shift, value=MASK_VALUE):
    """Additive ``[nW, M*M, M*M]`` mask for attention on a rolled grid.

    Cells are labelled by the three bands ``[0, h-M)``, ``[h-M, h-s)`` and
    ``[h-s, h)`` on each axis; pairs with different labels are blocked.
    """
    nw = (h // window) * (w // window)
    if shift == 0:
        return np.zeros((nw, window * window, window * window))
    img = np.zeros((h, w))
    bands_h = (slice(0, h - window), slice(h - window, h - shift), slice(h - shift, h))
    bands_w = (slice(0, w - window), slice(w - window, w - shift), slice(w - shift, w))
    label = 0
    for bh in bands_h:
        for bw in bands_w:
            img[bh, bw] = label
            label += 1
    win = img.reshape(h // window, window, w // window, window).transpose(0, 2, 1, 3)
    win = win.reshape(nw, window * window)
    diff = win[:, :, None] != win[:, None, :]
    return np.where(diff, value, 0.0)


def relative_position_index(window):
    """``[M*M, M*M]`` index into the ``(2M-1)**2`` bias table."""
    coords = np.stack(np.meshgrid(np.arange(window), np.arange(window), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :]
    rel = rel.transpose(1, 2, 0) + (window - 1)
    return rel[..., 0] * (2 * window - 1) + rel[..., 1]


# layers

class PatchEmbed(nn.Module):
    """Non-overlapping P x P patches -> linear projection -> layer norm."""

    def __init__(self, patch, cin, cout, rng):
        super().__init__()
        self.patch, self.cin = patch, cin
        self.proj = nn.Linear(patch * patch * cin, cout, rng)
        self.norm = nn.LayerNorm(cout)

    def unfold(self, x):
        *lead, hh, ww, c = x.shape
        p = self.patch
        if hh % p or ww % p:
            raise ConfigError(f"input {hh}x{ww} is not divisible by patch size {p}")
        x = reshape(x, tuple(lead) + (hh // p, p, ww // p, p, c))
        n = len(lead)
        x = transpose(x, tuple(range(n)) + (n, n + 2, n + 1, n + 3, n + 4))
        return reshape(x, tuple(lead) + (hh // p, ww // p, p * p * c))

    def forward(self, x):
        return self.norm(self.proj(self.unfold(x)))

    def cost(self, shape, prefix=""):
        *lead, hh, ww, c = shape
        p = self.patch
        if hh % p or ww % p:
            raise ConfigError(f"input {hh}x{ww} is not divisible by patch size {p}")
        shape = tuple(lead) + (hh // p, ww // p, p * p * c)
        return nn.sequential_cost([("proj", self.proj), ("norm", self.norm)], shape, prefix)


class WindowAttention(nn.Module):
    """Multi-head self-attention inside M x M windows with relative position bias."""

    def __init__(self, dim, heads, window, rng):
        super().__init__()
        if dim % heads:
            raise ConfigError(f"dim {dim} not divisible by heads {heads}")
        self.dim, self.heads, self.window = dim, heads, window
        self.head_dim = dim // heads
        self.scale = self.head_dim ** -0.5
        self.rel_bias_table = nn.param(rng.trunc_normal(((2 * window - 1) ** 2, heads), nn.INIT_STD))
        self.rel_index = relative_position_index(window)
        self.qkv = nn.Linear(dim, 3 * dim, rng)
        self.proj = nn.Linear(dim, dim, rng)

    def position_bias(self):
        """``[heads, M*M, M*M]`` bias gathered from the table."""
        n = self.window * self.window
        b = take(self.rel_bias_table, self.rel_index.reshape(-1), axis=0)
        return transpose(reshape(b, (n, n, self.heads)), (2, 0, 1))

    def attention_weights(self, xw, mask=None):
        b, n, c = xw.shape
        h, d = self.heads, self.head_dim
        qkv = reshape(self.qkv(xw), (b, n, 3, h, d))
        qkv = transpose(qkv, (2, 0, 3, 1, 4))
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = mul(q, self.scale) @ transpose(k, (0, 1, 3, 2))
        scores = add(scores, self.position_bias())
        if mask is not None:
            nw = mask.shape[0]
            if b % nw or mask.shape[1:] != (n, n):
                raise DimensionError(f"mask {mask.shape} does not fit {b} windows of {n} tokens")
            scores = reshape(scores, (b // nw, nw, h, n, n))
            scores = add(scores, mask[None, :, None].astype(scores.dtype))
            scores = reshape(scores, (b, h, n, n))
        return ops.softmax(scores, axis=-1), v

    def forward(self, xw, mask=None):
        """``xw [B, M*M, C]``; ``mask`` is ``[nW, M*M, M*M]`` with B a multiple of nW."""
        b, n, c = xw.shape
        if n != self.window * self.window or c != self.dim:
            raise DimensionError(f"windows {xw.shape} do not match window {self.window}, dim {self.dim}")
        attn, v = self.attention_weights(xw, mask)
        out = transpose(attn @ v, (0, 2, 1, 3))
        return self.proj(reshape(out, (b, n, c)))

    def cost(self, shape, prefix=""):
        b, n, c = shape
        rows, _ = self.qkv.cost(shape, prefix + "qkv.")
        # QK^T and AV: B * heads * N * N * d each
        own = self.row(prefix, 2 * b * self.heads * n * n * self.head_dim, (b, self.heads, n, n))
        prow, out = self.proj.cost(shape, prefix + "proj.")
        return rows + [own] + prow, out


class Mlp(nn.Module):
    def __init__(self, dim, hidden, rng):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden, rng)
        self.fc2 = nn.Linear(hidden, dim, rng)

    def forward(self, x):
        return self.fc2(ops.gelu(self.fc1(x)))

    def cost(self, shape, prefix=""):
        return nn.sequential_cost([("fc1", self.fc1), ("fc2", self.fc2)], shape, prefix)


class SwinBlock(nn.Module):
    """LN -> (S)W-MHSA -> residual, LN -> MLP -> residual on ``[*lead, h, w, C]``."""

    def __init__(self, dim, heads, window, shift, grid, rng, mlp_ratio=4, drop_path=0.0, noise=None):
        super().__init__()
        self.window, self.shift, self.grid = window, shift, tuple(grid)
        self.drop_path, self.noise = drop_path, noise
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, heads, window, rng)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio * dim, rng)
        self.mask = build_shift_mask(grid[0], grid[1], window, shift) if shift else None

    def _residual(self, x, branch):
        if self.training and self.drop_path > 0.0:
            # stochastic depth: drop the whole branch per leading index
            keep_shape = x.shape[:-3] + (1, 1, 1)
            keep = (self.noise.uniform(keep_shape) >= self.drop_path) / (1.0 - self.drop_path)
            branch = mul(branch, keep.astype(x.dtype))
        return add(x, branch)

    def forward(self, z):
        *lead, h, w, c = z.shape
        if (h, w) != self.grid:
            raise DimensionError(f"block built for grid {self.grid}, got {(h, w)}")
        y = cyclic_shift(self.norm1(z), self.shift)
        yw = self.attn(window_partition(y, self.window), self.mask)
        y = cyclic_shift(window_reverse(yw, self.window, h, w, lead), -self.shift)
        z = self._residual(z, y)
        return self._residual(z, self.mlp(self.norm2(z)))

    def cost(self, shape, prefix=""):
        *lead, h, w, c = shape
        nw = int(np.prod(lead, dtype=np.int64)) * (h // self.window) * (w // self.window)
        n = self.window * self.window
        rows, _ = self.norm1.cost(shape, prefix + "norm1.")
        r, _ = self.attn.cost((nw, n, c), prefix + "attn.")
        rows += r
        r, _ = self.norm2.cost(shape, prefix + "norm2.")
        rows += r
        r, _ = self.mlp.cost(shape, prefix + "mlp.")
        return rows + r, tuple(shape)


class PatchMerge(nn.Module):
    """Concatenate 2 x 2 neighbours (4C), layer norm, project to 2C without bias."""

    def __init__(self, dim, rng):
        super().__init__()
        self.norm = nn.LayerNorm(4 * dim)
        self.reduction = nn.Linear(4 * dim, 2 * dim, rng, bias=False)

    def forward(self, z):
        *lead, h, w, c = z.shape
        if h % 2 or w % 2:
            raise ConfigError(f"patch merge needs an even grid, got {h}x{w}")
        e = (Ellipsis,)
        x0 = getitem(z, e + (slice(0, None, 2), slice(0, None, 2), slice(None)))
        x1 = getitem(z, e + (slice(1, None, 2), slice(0, None, 2), slice(None)))
        x2 = getitem(z, e + (slice(0, None, 2), slice(1, None, 2), slice(None)))
        x3 = getitem(z, e + (slice(1, None, 2), slice(1, None, 2), slice(None)))
        return self.reduction(self.norm(concat([x0, x1, x2, x3], axis=-1)))

    def cost(self, shape, prefix=""):
        *lead, h, w, c = shape
        if h % 2 or w % 2:
            raise ConfigError(f"patch merge needs an even grid, got {h}x{w}")
        shape = tuple(lead) + (h // 2, w // 2, 4 * c)
        return nn.sequential_cost([("norm", self.norm), ("reduction", self.reduction)], shape, prefix)


class Stage(nn.Module):
    def __init__(self, spec, grid, rng, mlp_ratio=4, drop_path=0.0, noise=None):
        super().__init__()
        window, shift = effective_window(spec.window, grid)
        self.window, self.shift = window, shift
        self.blocks = nn.ModuleList(
            SwinBlock(spec.channels, spec.heads, window, shift if i % 2 else 0, grid, rng,
                      mlp_ratio, drop_path, noise)
            for i in range(spec.depth))
        self.merge = PatchMerge(spec.channels, rng)

    def forward(self, z):
        for blk in self.blocks:
            z = blk(z)
        return self.merge(z)

    def cost(self, shape, prefix=""):
        items = [(f"blocks.{i}", b) for i, b in enumerate(self.blocks)] + [("merge", self.merge)]
        return nn.sequential_cost(items, shape, prefix)


class SwinSpatial(nn.Module):
    """Stem features ``[*lead, H, W, Cs]`` -> pooled ``[*lead, 2 * C_last]``."""

    def __init__(self, cfg: ModelConfig, in_channels, grid, rng, noise=None):
        super().__init__()
        self.embed = PatchEmbed(cfg.patch_size, in_channels, cfg.stages[0].channels, rng)
        self.stages = nn.ModuleList()
        gh, gw = grid
        self.shift_clamped = []
        for spec in cfg.stages:
            stage = Stage(spec, (gh, gw), rng, cfg.mlp_ratio, cfg.drop_path, noise)
            if stage.shift == 0 and spec.window // 2 > 0:
                self.shift_clamped.append(len(self.stages) + 1)
            self.stages.append(stage)
            gh, gw = gh // 2, gw // 2

    def forward(self, fx):
        z = self.embed(fx)
        for stage in self.stages:
            z = stage(z)
        return mean(z, axis=(-3, -2))

    def cost(self, shape, prefix=""):
        items = [("embed", self.embed)] + [(f"stages.{i}", s) for i, s in enumerate(self.stages)]
        rows, out = nn.sequential_cost(items, shape, prefix)
        return rows, tuple(out[:-3]) + (out[-1],)
