"""Registered finite-difference checks for every differentiable operator.

Each check builds random 64-bit inputs from an :class:`Rng`, reduces the
operator output to a scalar with a fixed random projection (so every output
element contributes with a distinct weight) and runs
:func:`finite_diff_check`.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import nn, ops
from .autodiff import Tensor
from .config import TemporalBlockConfig, reduced
from .gradcheck import finite_diff_check
from .rng import Rng
from .swin import PatchEmbed, PatchMerge, SwinBlock, WindowAttention, build_shift_mask
from .temporal import ConvAttentionBlock, ConvModule, FeedForward, RelPositionMHSA

F64 = np.float64


def _t(rng, shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(shape, low, high), dtype=F64)


def _away_from_zero(rng, shape, margin=0.05):
    """Uniform values with ``|x| >= margin`` so kinks are never straddled."""
    x = rng.uniform(shape, margin, 1.0)
    sign = np.where(rng.uniform(shape) < 0.5, -1.0, 1.0)
    return Tensor(x * sign, dtype=F64)


def projected(fn, rng):
    """Scalar ``sum(fn(*xs) * W)`` with a fixed random ``W`` drawn on first use."""
    cache = {}

    def f(*xs):
        out = fn(*xs)
        if "w" not in cache:
            cache["w"] = Tensor(rng.uniform(out.shape, -1.0, 1.0), dtype=F64)
        return ad.sum_(ad.mul(out, cache["w"]))

    return f


def _module_check(module, inputs, fn, rng, max_entries=None, tolerance=1e-4):
    module.astype(F64)
    params = [p for _, p in module.named_parameters()]
    f = projected(lambda *xs: fn(*xs[: len(inputs)]), rng)
    return finite_diff_check(f, list(inputs) + params, tolerance=tolerance,
                             max_entries=max_entries, rng=rng)


# elementary operators

def _check_matmul(rng, tol):
    a, b = _t(rng, (2, 3, 4)), _t(rng, (4, 5))
    return finite_diff_check(projected(ad.matmul, rng), [a, b], tolerance=tol)


def _check_arith(rng, tol):
    a, b = _t(rng, (3, 4)), _t(rng, (4,), 0.5, 1.5)

    def fn(a, b):
        return ad.div(ad.sub(ad.mul(ad.add(a, b), a), b), b)

    return finite_diff_check(projected(fn, rng), [a, b], tolerance=tol)


def _check_exp_log(rng, tol):
    x = _t(rng, (3, 4), 0.2, 2.0)
    return finite_diff_check(projected(lambda x: ad.add(ad.exp(x), ad.log(x)), rng), x, tolerance=tol)


def _check_reductions(rng, tol):
    x = _t(rng, (2, 3, 4))

    def fn(x):
        return ad.add(ad.sum_(x, axis=1, keepdims=True), ad.mean(ad.square(x), axis=(0, 2), keepdims=True))

    return finite_diff_check(projected(fn, rng), x, tolerance=tol)


def _check_layout(rng, tol):
    x = _t(rng, (2, 3, 4))

    def fn(x):
        y = ad.transpose(ad.reshape(x, (6, 4)), (1, 0))
        y = ad.roll(ad.pad(y, ((1, 0), (0, 2))), (1, -2), (0, 1))
        return ad.concat([ad.getitem(y, (slice(1, 4), slice(None))), ad.swapaxes(y[:3, :3], 0, 1)], axis=1)

    return finite_diff_check(projected(fn, rng), x, tolerance=tol)


def _check_take(rng, tol):
    x = _t(rng, (5, 3))
    idx = np.array([[0, 4, 4], [2, 1, 0]])
    return finite_diff_check(projected(lambda x: ad.take(x, idx, axis=0), rng), x, tolerance=tol)


def _check_linear(rng, tol):
    x, w, b = _t(rng, (2, 3, 4)), _t(rng, (4, 5)), _t(rng, (5,))
    return finite_diff_check(projected(ops.linear, rng), [x, w, b], tolerance=tol)


def _check_conv3d(rng, tol):
    x, w, b = _t(rng, (4, 5, 5, 2)), _t(rng, (3, 3, 3, 2, 3)), _t(rng, (3,))
    fn = lambda x, w, b: ops.conv3d(x, w, b, stride=(1, 2, 1), pad=(1, 1, 0))
    return finite_diff_check(projected(fn, rng), [x, w, b], tolerance=tol)


def _check_conv2d_grouped(rng, tol):
    x, w, b = _t(rng, (2, 5, 6, 4)), _t(rng, (3, 2, 2, 6)), _t(rng, (6,))
    fn = lambda x, w, b: ops.conv2d(x, w, b, stride=2, pad=1, groups=2)
    return finite_diff_check(projected(fn, rng), [x, w, b], tolerance=tol)


def _check_dwconv1d(rng, tol):
    x, w, b = _t(rng, (2, 7, 3)), _t(rng, (5, 3)), _t(rng, (3,))

    def fn(x, w, b):
        return ad.add(ops.dwconv1d(x, w, b, pad=2), ops.dwconv1d(x, w, b, causal=True))

    return finite_diff_check(projected(fn, rng), [x, w, b], tolerance=tol)


def _check_max_pool(rng, tol):
    # distinct values a few steps apart so no perturbation reorders a window
    x = Tensor((rng.permutation(2 * 6 * 6 * 2).reshape(2, 6, 6, 2) * 0.01), dtype=F64)
    fn = lambda x: ops.max_pool(x, (3, 3), stride=2, pad=1)
    return finite_diff_check(projected(fn, rng), x, tolerance=tol)


def _check_layer_norm(rng, tol):
    x, w, b = _t(rng, (3, 5)), _t(rng, (5,)), _t(rng, (5,))
    return finite_diff_check(projected(ops.layer_norm, rng), [x, w, b], tolerance=tol)


def _check_batch_norm(rng, tol):
    x, w, b = _t(rng, (2, 3, 4, 3)), _t(rng, (3,)), _t(rng, (3,))
    rm, rv = rng.uniform(3, -0.5, 0.5), rng.uniform(3, 0.5, 1.5)

    def fn(x, w, b):
        train = ops.batch_norm(x, w, b, rm.copy(), rv.copy(), training=True)
        return ad.add(train, ops.batch_norm(x, w, b, rm, rv, training=False))

    return finite_diff_check(projected(fn, rng), [x, w, b], tolerance=tol)


def _check_activations(rng, tol):
    x, slope = _away_from_zero(rng, (3, 4)), _t(rng, (4,))

    def fn(x, slope):
        parts = [ops.relu(x), ops.prelu(x, slope), ops.gelu(x), ops.sigmoid(x), ops.swish(x),
                 ops.glu(x, axis=-1)]
        return ad.concat(parts, axis=-1)

    return finite_diff_check(projected(fn, rng), [x, slope], tolerance=tol)


def _check_softmax(rng, tol):
    x = _t(rng, (3, 5), -3.0, 3.0)
    fn = lambda x: ad.concat([ops.softmax(x, axis=-1), ops.log_softmax(x, axis=0)], axis=-1)
    return finite_diff_check(projected(fn, rng), x, tolerance=tol)


def _check_losses(rng, tol):
    logits, target = _t(rng, (4, 3)), rng.uniform((4, 3))
    labels = np.array([0, 2, 1, 2])

    def f(x):
        return ad.add(ops.cross_entropy(x, labels), ops.mse_loss(x, target))

    return finite_diff_check(f, logits, tolerance=tol)


# composite layers

def _check_window_attention(rng, tol):
    attn = WindowAttention(8, 2, 2, rng)
    mask = build_shift_mask(4, 4, 2, 1)
    x = _t(rng, (2 * 4, 4, 8))
    return _module_check(attn, [x], lambda x: attn(x, mask), rng, None, tol)


def _check_swin_block_pair(rng, tol):
    blocks = [SwinBlock(8, 2, 2, s, (4, 4), rng, mlp_ratio=2) for s in (0, 1)]
    holder = nn.ModuleList(blocks)
    x = _t(rng, (2, 4, 4, 8))
    return _module_check(holder, [x], lambda x: blocks[1](blocks[0](x)), rng, 40, tol)


def _check_patch_embed_merge(rng, tol):
    # O(1) projection weights keep the following layer norms well conditioned;
    # at init scale the tokens are nearly constant and the third derivative
    # of the norm swamps a 1e-4 step
    embed, merge = PatchEmbed(3, 4, 8, rng), PatchMerge(8, rng)
    for lin in (embed.proj, merge.reduction):
        lin.weight.data = rng.uniform(lin.weight.shape, -0.5, 0.5).astype(np.float32)
    holder = nn.ModuleList([embed, merge])
    x = _t(rng, (2, 6, 6, 4), -3.0, 3.0)
    return _module_check(holder, [x], lambda x: merge(embed(x)), rng, 40, tol)


def _check_ffn(rng, tol):
    ffn = FeedForward(8, 8, rng)
    x = _t(rng, (2, 5, 8))
    return _module_check(ffn, [x], ffn, rng, None, tol)


def _check_rel_mhsa(rng, tol):
    mhsa = RelPositionMHSA(8, 2, rng)
    x = _t(rng, (2, 5, 8))
    return _module_check(mhsa, [x], mhsa, rng, None, tol)


def _check_conv_module(rng, tol):
    conv = ConvModule(8, 3, rng, causal=True)
    x = _t(rng, (2, 6, 8))
    return _module_check(conv, [x], conv, rng, None, tol)


def _check_conv_attention_block(rng, tol):
    cfg = TemporalBlockConfig(dim=8, heads=2, ffn_hidden=8, dw_kernel=3, dropout=0.0)
    block = ConvAttentionBlock(cfg, rng)
    x = _t(rng, (1, 6, 8))
    return _module_check(block, [x], block, rng, 30, tol)


OP_CHECKS = {
    "matmul": _check_matmul,
    "add/sub/mul/div": _check_arith,
    "exp/log": _check_exp_log,
    "sum/mean/square": _check_reductions,
    "reshape/transpose/pad/roll/getitem/concat": _check_layout,
    "take": _check_take,
    "linear": _check_linear,
    "conv3d": _check_conv3d,
    "conv2d_grouped": _check_conv2d_grouped,
    "dwconv1d": _check_dwconv1d,
    "max_pool": _check_max_pool,
    "layer_norm": _check_layer_norm,
    "batch_norm": _check_batch_norm,
    "activations": _check_activations,
    "softmax/log_softmax": _check_softmax,
    "cross_entropy/mse": _check_losses,
    "window_mhsa": _check_window_attention,
    "swin_block_pair": _check_swin_block_pair,
    "patch_embed/patch_merge": _check_patch_embed_merge,
    "ffn_half": _check_ffn,
    "rel_mhsa": _check_rel_mhsa,
    "conv_module": _check_conv_module,
    "conv_attention_block": _check_conv_attention_block,
}


def rescale_projections(model, rng):
    """Variance-preserving weights for every conv and linear layer."""
    for m in model.modules():
        if isinstance(m, (nn.Linear, nn.Conv, nn.DepthwiseConv1d)):
            w = m.weight
            fan_in = w.size // w.shape[-1] if not isinstance(m, nn.DepthwiseConv1d) else w.shape[0]
            w.data = rng.normal(w.shape, fan_in ** -0.5).astype(w.dtype)


def check_reduced_model(seed=0, tolerance=1e-4, max_entries=3, streaming=False):
    """End-to-end check on the reduced encoder (64-bit, eval mode).

    Every parameter tensor is checked at ``max_entries`` sampled coordinates
    (all of them when smaller), plus sampled input pixels.  Projection
    weights are redrawn with variance ``1 / fan_in`` first: at the 0.02
    initialisation the patch-embedding norm sees near-constant tokens and a
    1e-4 central difference is dominated by truncation error.
    """
    from .zoo import build

    cfg = reduced(streaming=streaming, seed=seed)
    model = build(cfg).astype(F64)
    rng = Rng(seed + 7)
    rescale_projections(model, rng)
    t, h, w = cfg.input_shape
    clip = Tensor(rng.uniform((t, h, w, 1)), dtype=F64)
    target = rng.uniform((t, cfg.temporal.dim))
    params = [p for _, p in model.named_parameters()]
    for name, p in model.named_parameters():
        p.name = name

    def f(x, *_):
        return ops.mse_loss(model(x), target)

    return finite_diff_check(f, [clip] + params, tolerance=tolerance, max_entries=max_entries, rng=rng)


def run_suite(seed=0, tolerance=1e-4, checks=None, model=True, max_entries=3, streaming=False):
    """``{name: GradCheckReport}`` for every registered op and the reduced model."""
    checks = OP_CHECKS if checks is None else checks
    reports = {}
    for name, check in checks.items():
        reports[name] = check(Rng(seed), tolerance)
    if model:
        reports["reduced_model"] = check_reduced_model(seed, tolerance, max_entries, streaming)
    return reports


def failures(reports):
    return [name for name, r in reports.items() if not r.passed]

