"""Naive loop implementations used as independent oracles in tests.

Everything here works on plain numpy arrays in float64 and is written for
clarity, not speed.  None of it shares code with :mod:`swinlip.ops`.
"""

import itertools
import math

import numpy as np


def matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(k):
                acc += a[i, p] * b[p, j]
            out[i, j] = acc
    return out


def conv(x, w, bias=None, stride=None, pad=None, groups=1):
    """Cross-correlation over ``x [*spatial, Cin]`` with ``w [*k, Cin/g, Cout]``.

    ``pad`` is a list of (before, after) per spatial axis.
    """
    nsp = w.ndim - 2
    kernel = w.shape[:nsp]
    stride = stride or (1,) * nsp
    pad = pad or [(0, 0)] * nsp
    cin, cout = x.shape[-1], w.shape[-1]
    cg, og = cin // groups, cout // groups
    xp = np.zeros(tuple(n + a + b for n, (a, b) in zip(x.shape[:-1], pad)) + (cin,))
    xp[tuple(slice(a, a + n) for n, (a, _) in zip(x.shape[:-1], pad))] = x
    outs = [(xp.shape[i] - kernel[i]) // stride[i] + 1 for i in range(nsp)]
    out = np.zeros(tuple(outs) + (cout,))
    for pos in itertools.product(*(range(o) for o in outs)):
        for co in range(cout):
            g = co // og
            acc = 0.0 if bias is None else float(bias[co])
            for tap in itertools.product(*(range(k) for k in kernel)):
                src = tuple(p * s + t for p, s, t in zip(pos, stride, tap))
                for ci in range(cg):
                    acc += xp[src + (g * cg + ci,)] * w[tap + (ci, co)]
            out[pos + (co,)] = acc
    return out


def softmax(x):
    """Row softmax of a 1-d vector straight from the definition."""
    e = np.array([math.exp(v) for v in x])
    return e / e.sum()


def layer_norm(x, weight, bias, eps=1e-5):
    out = np.empty_like(x, dtype=np.float64)
    for idx in np.ndindex(x.shape[:-1]):
        row = x[idx]
        mu = sum(row) / len(row)
        var = sum((v - mu) ** 2 for v in row) / len(row)
        out[idx] = [(v - mu) / math.sqrt(var + eps) * w + b for v, w, b in zip(row, weight, bias)]
    return out


def batch_norm_eval(x, weight, bias, mean, var, eps=1e-5):
    out = np.empty_like(x, dtype=np.float64)
    for idx in np.ndindex(x.shape):
        c = idx[-1]
        out[idx] = (x[idx] - mean[c]) / math.sqrt(var[c] + eps) * weight[c] + bias[c]
    return out


def attention(x, wq, wk, wv, wo, bq, bk, bv, bo, heads, bias=None, mask=None):
    """Dense multi-head self-attention over tokens ``x [N, C]``.

    ``bias`` is ``[heads, N, N]`` and ``mask`` is ``[N, N]``; both additive.
    """
    n, c = x.shape
    d = c // heads
    q = x @ wq + bq
    k = x @ wk + bk
    v = x @ wv + bv
    out = np.zeros((n, c))
    for h in range(heads):
        sl = slice(h * d, (h + 1) * d)
        for i in range(n):
            scores = np.zeros(n)
            for j in range(n):
                s = sum(q[i, sl] * k[j, sl]) / math.sqrt(d)
                if bias is not None:
                    s += bias[h, i, j]
                if mask is not None:
                    s += mask[i, j]
                scores[j] = s
            p = softmax(scores - scores.max())
            for j in range(n):
                out[i, sl] += p[j] * v[j, sl]
    return out @ wo + bo


def shift_region_labels(h, w, window, shift):
    """Label each grid cell by the pre-shift region it comes from.

    Cell ``(i, j)`` of the grid rolled by ``-shift`` came from
    ``((i + shift) % h, (j + shift) % w)``; its region is which axes wrapped
    around on the way.
    """
    labels = np.zeros((h, w), dtype=int)
    for i in range(h):
        for j in range(w):
            wrapped_i = i + shift >= h
            wrapped_j = j + shift >= w
            labels[i, j] = 2 * wrapped_i + wrapped_j
    return labels


def shift_mask(h, w, window, shift, value=-1e4):
    """Per-window ``[nW, M*M, M*M]`` mask by explicit region comparison."""
    labels = shift_region_labels(h, w, window, shift) if shift else np.zeros((h, w), dtype=int)
    masks = []
    for wi in range(h // window):
        for wj in range(w // window):
            cells = [labels[wi * window + a, wj * window + b]
                     for a in range(window) for b in range(window)]
            m = np.zeros((len(cells), len(cells)))
            for p, lp in enumerate(cells):
                for q, lq in enumerate(cells):
                    if lp != lq:
                        m[p, q] = value
            masks.append(m)
    return np.stack(masks)


def relative_attention(x, wq, bq, wk, bk, wv, bv, wo, bo, wpos, u, v, heads):
    """Temporal self-attention with relative positional scores, one pair at a time.

    The displacement embedding of ``i - j`` is built directly from its
    sin/cos definition, so this shares no indexing with the fast gather.
    """
    t, c = x.shape
    d = c // heads
    q, k, val = x @ wq + bq, x @ wk + bk, x @ wv + bv
    out = np.zeros((t, c))
    for h in range(heads):
        sl = slice(h * d, (h + 1) * d)
        for i in range(t):
            scores = np.zeros(t)
            for j in range(t):
                disp = i - j
                pe = np.zeros(c)
                for m in range(0, c, 2):
                    angle = disp / 10000.0 ** (m / c)
                    pe[m] = math.sin(angle)
                    pe[m + 1] = math.cos(angle)
                p = (pe @ wpos)[sl]
                scores[j] = ((q[i, sl] + u[h]) @ k[j, sl] + (q[i, sl] + v[h]) @ p) / math.sqrt(d)
            w = softmax(scores - scores.max())
            for j in range(t):
                out[i, sl] += w[j] * val[j, sl]
    return out @ wo + bo


def unfold_patches(x, patch):
    """``[H, W, C] -> [H/P, W/P, P*P*C]`` with each patch flattened row-major (row, col, channel)."""
    h, w, c = x.shape
    out = np.zeros((h // patch, w // patch, patch * patch * c))
    for i in range(h // patch):
        for j in range(w // patch):
            vals = []
            for a in range(patch):
                for b in range(patch):
                    for ch in range(c):
                        vals.append(x[i * patch + a, j * patch + b, ch])
            out[i, j] = vals
    return out


def merge_neighbours(x):
    """``[h, w, C] -> [h/2, w/2, 4C]`` concatenating (0,0), (1,0), (0,1), (1,1) neighbours."""
    h, w, c = x.shape
    out = np.zeros((h // 2, w // 2, 4 * c))
    for i in range(h // 2):
        for j in range(w // 2):
            parts = [x[2 * i + di, 2 * j + dj] for di, dj in ((0, 0), (1, 0), (0, 1), (1, 1))]
            out[i, j] = np.concatenate(parts)
    return out


def depthwise_conv1d(x, w, bias, causal=False):
    """``x [T, C]``, ``w [k, C]``; zero padding, symmetric or left-only."""
    t, c = x.shape
    k = w.shape[0]
    left = k - 1 if causal else k // 2
    out = np.zeros((t, c))
    for ti in range(t):
        for ch in range(c):
            acc = bias[ch]
            for tap in range(k):
                src = ti + tap - left
                if 0 <= src < t:
                    acc += x[src, ch] * w[tap, ch]
            out[ti, ch] = acc
    return out
