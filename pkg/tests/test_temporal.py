import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from swinlip import nn, reference
from swinlip.autodiff import Tensor
from swinlip.config import TemporalBlockConfig
from swinlip.errors import ConfigError
from swinlip.rng import Rng
from swinlip.temporal import (ConvModule, FeedForward, RelPositionMHSA, TemporalModule,
                              relative_gather_index, sinusoid_relative)

F64 = np.float64
SMALL = TemporalBlockConfig(dim=16, heads=2, ffn_hidden=24, dw_kernel=5, dropout=0.0)
SMALL_STREAMING = TemporalBlockConfig(dim=16, heads=2, ffn_hidden=24, dw_kernel=5, dropout=0.0,
                                      streaming=True)


def T64(a):
    return Tensor(np.asarray(a, dtype=F64), dtype=F64)


def _randomise(module, rng, scale=0.3):
    for _, p in module.named_parameters():
        p.data = rng.normal(p.shape, scale).astype(F64)
    return module.astype(F64).eval()


def _zero_projections(module):
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.DepthwiseConv1d)):
            for _, p in m.named_parameters():
                p.data[...] = 0.0


def _swish(x):
    return x / (1.0 + np.exp(-x))


def _ln(x, norm):
    return reference.layer_norm(x, norm.weight.data, norm.bias.data)


def test_ffn_with_zero_weights_is_zero():
    ffn = FeedForward(8, 12, Rng(0))
    _zero_projections(ffn)
    assert not ffn(Tensor(Rng(1).normal((5, 8)))).data.any()


def test_ffn_param_count():
    assert FeedForward(512, 512, Rng(0)).num_params() == 526_336


def test_ffn_matches_formula():
    rng = Rng(2)
    ffn = _randomise(FeedForward(6, 10, rng), rng)
    x = rng.normal((4, 6))
    h = _swish(_ln(x, ffn.norm) @ ffn.fc1.weight.data + ffn.fc1.bias.data)
    want = h @ ffn.fc2.weight.data + ffn.fc2.bias.data
    assert np.abs(ffn(T64(x)).data - want).max() < 1e-9


def test_relative_gather_picks_displacement():
    t = 4
    idx = relative_gather_index(t)
    offsets = np.arange(t - 1, -t, -1)
    for i in range(t):
        for j in range(t):
            assert offsets[idx[i, j] - i * (2 * t - 1)] == i - j


def test_sinusoid_zero_displacement():
    pe = sinusoid_relative(3, 8)
    np.testing.assert_allclose(pe[2, 0::2], 0.0, atol=1e-7)
    np.testing.assert_allclose(pe[2, 1::2], 1.0)


def test_rel_mhsa_single_frame_returns_projected_value():
    rng = Rng(3)
    mhsa = _randomise(RelPositionMHSA(8, 2, rng), rng)
    x = rng.normal((1, 8))
    v = _ln(x, mhsa.norm) @ mhsa.v.weight.data + mhsa.v.bias.data
    want = v @ mhsa.out.weight.data + mhsa.out.bias.data
    np.testing.assert_allclose(mhsa(T64(x)).data, want, atol=1e-12)


def test_rel_mhsa_matches_pairwise_oracle():
    rng = Rng(4)
    mhsa = _randomise(RelPositionMHSA(8, 2, rng), rng)
    x = rng.normal((7, 8))
    xn = _ln(x, mhsa.norm)
    want = reference.relative_attention(
        xn, mhsa.q.weight.data, mhsa.q.bias.data, mhsa.k.weight.data, mhsa.k.bias.data,
        mhsa.v.weight.data, mhsa.v.bias.data, mhsa.out.weight.data, mhsa.out.bias.data,
        mhsa.pos.weight.data, mhsa.pos_bias_u.data, mhsa.pos_bias_v.data, 2)
    assert np.abs(mhsa(T64(x)).data - want).max() < 1e-6


def test_rel_mhsa_weights_are_rows_of_a_distribution():
    rng = Rng(5)
    mhsa = _randomise(RelPositionMHSA(8, 2, rng), rng)
    w, _ = mhsa.attention_weights(T64(rng.normal((2, 6, 8))))
    np.testing.assert_allclose(w.data.sum(-1), 1.0)


def test_rel_mhsa_without_position_terms_is_permutation_equivariant():
    rng = Rng(6)
    mhsa = _randomise(RelPositionMHSA(8, 2, rng), rng)
    mhsa.pos.weight.data[...] = 0.0
    mhsa.pos_bias_v.data[...] = 0.0
    x = rng.normal((6, 8))
    perm = [5, 2, 0, 4, 1, 3]
    np.testing.assert_allclose(mhsa(T64(x[perm])).data, mhsa(T64(x)).data[perm], atol=1e-12)


def test_rel_mhsa_with_position_terms_is_not_permutation_equivariant():
    rng = Rng(6)
    mhsa = _randomise(RelPositionMHSA(8, 2, rng), rng)
    x = rng.normal((6, 8))
    perm = [5, 2, 0, 4, 1, 3]
    assert np.abs(mhsa(T64(x[perm])).data - mhsa(T64(x)).data[perm]).max() > 1e-6


@pytest.mark.parametrize("causal", [False, True])
def test_conv_module_matches_oracle(causal):
    rng = Rng(7)
    conv = _randomise(ConvModule(6, 5, rng, causal=causal), rng)
    x = rng.normal((9, 6))
    h = _ln(x, conv.norm) @ conv.pw1.weight.data + conv.pw1.bias.data
    h = h[:, :6] / (1.0 + np.exp(-h[:, 6:]))
    h = reference.depthwise_conv1d(h, conv.dw.weight.data, conv.dw.bias.data, causal)
    want = _swish(h) @ conv.pw2.weight.data + conv.pw2.bias.data
    assert np.abs(conv(T64(x)).data - want).max() < 1e-6


def test_even_depthwise_kernel_rejected():
    with pytest.raises(ConfigError):
        ConvModule(4, 4, Rng(0))


@pytest.mark.parametrize("causal,support", [(False, {3, 4, 5, 6, 7}), (True, {5, 6, 7, 8, 9})])
def test_depthwise_impulse_support(causal, support):
    conv = ConvModule(4, 5, Rng(8), causal=causal).astype(F64)
    dw = conv.dw.weight.data
    dw[...] = 1.0
    x = np.zeros((12, 4))
    x[5] = 1.0
    h = conv.dw(T64(x)).data
    assert set(np.flatnonzero(np.abs(h - conv.dw.bias.data).max(-1) > 0)) == support


def test_all_zero_projections_reduce_block_stack_to_layer_norm():
    mod = TemporalModule(SMALL, Rng(9))
    _zero_projections(mod)
    for blk in mod.blocks:
        blk.mhsa.pos_bias_u.data[...] = 0.0
        blk.mhsa.pos_bias_v.data[...] = 0.0
    g = Rng(10).normal((5, 16))
    ln = lambda v: (v - v.mean(-1, keepdims=True)) / np.sqrt(v.var(-1, keepdims=True) + 1e-5)
    want = ln(ln(g))
    np.testing.assert_allclose(mod.eval()(Tensor(g, dtype=F64)).data, want, atol=1e-9)


@given(st.integers(0, 2 ** 32), st.integers(2, 12))
def test_streaming_prefix_is_causal(seed, t):
    rng = Rng(seed)
    mod = _randomise(TemporalModule(SMALL_STREAMING, Rng(11)), Rng(12), 0.2)
    g = rng.normal((t, 16))
    cut = int(rng.integers(1, t, ()))
    base = mod(T64(g)).data
    g2 = g.copy()
    g2[cut:] = rng.normal((t - cut, 16))
    np.testing.assert_array_equal(mod(T64(g2)).data[:cut], base[:cut])


def test_bidirectional_output_sees_the_future():
    mod = _randomise(TemporalModule(SMALL, Rng(11)), Rng(12), 0.2)
    g = Rng(13).normal((8, 16))
    base = mod(T64(g)).data
    g[6] += Rng(17).normal(16)
    assert np.abs(mod(T64(g)).data[0] - base[0]).max() > 1e-6


def test_streaming_blocks_have_no_attention():
    mod = TemporalModule(SMALL_STREAMING, Rng(0))
    assert all(b.mhsa is None for b in mod.blocks)
    assert all(b.conv.dw.causal for b in mod.blocks)


def test_full_size_param_counts():
    assert TemporalModule(TemporalBlockConfig(), Rng(0)).num_params() == 6_331_392
    assert TemporalModule(TemporalBlockConfig(streaming=True), Rng(0)).num_params() == 3_701_760


def test_output_shape_and_batch_axis():
    mod = _randomise(TemporalModule(SMALL, Rng(14)), Rng(15), 0.2)
    g = Rng(16).normal((3, 7, 16))
    out = mod(T64(g)).data
    assert out.shape == (3, 7, 16)
    np.testing.assert_allclose(out[2], mod(T64(g[2])).data, atol=1e-12)


def test_streaming_truncation_keeps_prefix():
    # shorter inputs may hit different BLAS kernels, so this is not bitwise
    mod = TemporalModule(TemporalBlockConfig(streaming=True, dropout=0.0), Rng(0)).eval()
    g = Rng(1).normal((12, 512)).astype(np.float32)
    full = mod(Tensor(g)).data
    for t in (1, 2, 5, 11):
        np.testing.assert_allclose(mod(Tensor(g[:t])).data, full[:t], atol=1e-5, rtol=0)
