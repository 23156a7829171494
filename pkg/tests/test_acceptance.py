"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line through the ``acceptance`` fixture; the
lines are repeated in the terminal summary.
"""

import itertools

import numpy as np
import pytest

from swinlip import reference
from swinlip.autodiff import Tensor
from swinlip.bench import run_bench
from swinlip.config import (ModelConfig, StemConfig, TemporalBlockConfig, reduced,
                            resnet18_frontend, swinlip_streaming)
from swinlip.cost import count_costs, diff_reports
from swinlip.gradsuite import OP_CHECKS, check_reduced_model, failures, run_suite
from swinlip.rng import Rng
from swinlip.stem import stem_variant_cost_probe
from swinlip.swin import (WindowAttention, build_shift_mask, cyclic_shift, window_partition,
                          window_reverse)
from swinlip.tensorio import read_tensor, write_tensor
from swinlip.train import overfit, overfit_config
from swinlip.zoo import ParamStore, build, load_weights, save_weights

CLIP = (29, 88, 88, 1)
SWEEP = (29, 58, 116, 232)


def _near(value, target, frac):
    return abs(value - target) <= frac * target


@pytest.fixture(scope="module")
def swinlip_report():
    return count_costs(build(ModelConfig()), CLIP)


@pytest.fixture(scope="module")
def streaming_report():
    return count_costs(build(swinlip_streaming()), CLIP)


def test_01_parameter_budget(acceptance, swinlip_report):
    total = swinlip_report.total_params
    for name, (p, _) in swinlip_report.module_totals().items():
        print(f"    {name:<10} {p:>12,} params")
    ok = _near(total, 12.46e6, 0.03)
    assert acceptance(1, "parameter budget", ok, f"{total / 1e6:.3f} M vs 12.46 M +-3%")


def test_02_compute_budget(acceptance, swinlip_report):
    flops = swinlip_report.total_flops
    ok = _near(flops, 1.92e9, 0.05) and swinlip_report.mac_to_flop == 1.0
    assert acceptance(2, "compute budget", ok,
                      f"{flops / 1e9:.3f} G vs 1.92 G +-5% ({swinlip_report.convention})")


def test_03_streaming_deltas(acceptance, swinlip_report, streaming_report):
    p, m = streaming_report.total_params, streaming_report.total_macs
    deltas = diff_reports(swinlip_report, streaming_report)
    changed = [d for d in deltas if d.params or d.macs]
    localized = all(d.name.startswith("temporal.") and ".mhsa" in d.name and d.only_in == "a"
                    for d in changed)
    ok = _near(p, 9.82e6, 0.03) and _near(m, 1.84e9, 0.05) and localized and changed
    delta = sum(d.params for d in deltas)
    assert acceptance(3, "streaming deltas", ok,
                      f"{p / 1e6:.3f} M, {m / 1e9:.3f} G; delta {delta / 1e6:.3f} M in "
                      f"{len(changed)} temporal MHSA rows")


def test_04_stem_ablation(acceptance):
    rep = stem_variant_cost_probe(StemConfig(kernel=(5, 7, 7), stride=(1, 1, 1), pad=(2, 3, 3)))
    ok = _near(rep.total_macs, 2.84e9, 0.05) and _near(rep.total_params, 12.47e6, 0.03)
    assert acceptance(4, "stem ablation", ok,
                      f"{rep.total_macs / 1e9:.3f} G, {rep.total_params / 1e6:.3f} M "
                      "vs 2.84 G +-5%, 12.47 M +-3%")


def test_05_baseline_costs(acceptance):
    rep = count_costs(build(resnet18_frontend()), CLIP)
    ok = _near(rep.total_params, 11.18e6, 0.05) and _near(rep.total_macs, 9.2e9, 0.10)
    assert acceptance(5, "baseline costs", ok,
                      f"{rep.total_params / 1e6:.3f} M, {rep.total_macs / 1e9:.3f} G "
                      "vs 11.18 M +-5%, 9.2 G +-10%")


@pytest.mark.slow
def test_06_latency_ordering(acceptance):
    swin = run_bench(ModelConfig(), SWEEP, reps=5, threads=1)
    base = run_bench(resnet18_frontend(), SWEEP, reps=5, threads=1)
    faster = all(swin.mean_ms(t) < base.mean_ms(t) for t in SWEEP)
    ratios = [swin.mean_ms(2 * t) / swin.mean_ms(t) for t in SWEEP[:-1]]
    ok = faster and max(ratios) <= 2.5
    table = ", ".join(f"T={t}: {swin.mean_ms(t):.0f}/{base.mean_ms(t):.0f} ms" for t in SWEEP)
    assert acceptance(6, "latency ordering", ok,
                      f"swinlip/resnet {table}; growth ratios "
                      f"{', '.join(f'{r:.2f}' for r in ratios)} (<= 2.5)")


def _dense_oracle(attn, x):
    c = attn.dim
    wq, wk, wv = (attn.qkv.weight.data[:, i * c:(i + 1) * c] for i in range(3))
    bq, bk, bv = (attn.qkv.bias.data[i * c:(i + 1) * c] for i in range(3))
    return reference.attention(x, wq, wk, wv, attn.proj.weight.data, bq, bk, bv,
                               attn.proj.bias.data, attn.heads, bias=attn.position_bias().data)


def test_07_attention_oracle(acceptance):
    worst = 0.0
    for seed in range(20):
        rng = Rng(seed)
        attn = WindowAttention(16, 2, 4, rng).astype(np.float64)
        for _, p in attn.named_parameters():
            p.data = rng.normal(p.shape, 0.3)
        # one frame, 4x4 grid, window covers the grid, no shift
        grid = rng.normal((4, 4, 16))
        got = attn(window_partition(Tensor(grid, dtype=np.float64), 4)).data[0]
        worst = max(worst, float(np.abs(got - _dense_oracle(attn, grid.reshape(16, 16))).max()))
    mask_cases = [(g, m, m // 2) for g, m in itertools.product((2, 4, 8, 16), (2, 4, 8))
                  if m < g and g % m == 0]
    masks_ok = all(np.array_equal(build_shift_mask(g, g, m, s), reference.shift_mask(g, g, m, s))
                   for g, m, s in mask_cases)
    ok = worst < 1e-5 and masks_ok
    assert acceptance(7, "attention oracle", ok,
                      f"dense max diff {worst:.2e} over 20 seeds; {len(mask_cases)} mask presets "
                      f"{'identical' if masks_ok else 'DIFFER'}")


@pytest.mark.slow
def test_08_gradient_suite(acceptance):
    bad, worst = [], 0.0
    for seed in range(20):
        reports = run_suite(seed=seed, tolerance=1e-4, model=False)
        bad += [f"{n}@{seed}" for n in failures(reports)]
        worst = max(worst, max(r.max_error for r in reports.values()))
    for seed in range(3):
        for streaming in (False, True):
            r = check_reduced_model(seed, 1e-4, streaming=streaming)
            if not r.passed:
                bad.append(f"reduced_model(streaming={streaming})@{seed}")
            worst = max(worst, r.max_error)
    ok = not bad
    assert acceptance(8, "gradient suite", ok,
                      f"{len(OP_CHECKS)} op checks x 20 seeds + reduced model x 6, "
                      f"worst rel err {worst:.2e} (< 1e-4)" + (f"; failing {bad}" if bad else ""))


def test_09_streaming_causality(acceptance):
    temporal = build(swinlip_streaming()).temporal
    encoder = build(reduced(streaming=True, frames=16))
    broken = 0
    for i in range(50):
        rng = Rng(1000 + i)
        t = int(rng.integers(2, 33, ()))
        cut = int(rng.integers(1, t, ()))
        g = rng.normal((t, 512)).astype(np.float32)
        base = temporal(Tensor(g)).data
        g[cut:] = rng.normal((t - cut, 512))
        broken += not np.array_equal(temporal(Tensor(g)).data[:cut], base[:cut])
        # full encoder: the symmetric stem looks one frame ahead
        clip = rng.uniform((16, 24, 24, 1)).astype(np.float32)
        cut = int(rng.integers(2, 16, ()))
        base = encoder(clip).data
        clip[cut:] = rng.uniform((16 - cut, 24, 24, 1))
        broken += not np.array_equal(encoder(clip).data[:cut - 1], base[:cut - 1])
    ok = broken == 0
    assert acceptance(9, "streaming causality", ok,
                      f"{100 - broken}/100 suffix edits left earlier outputs bitwise unchanged "
                      "(50 temporal module, 50 full encoder before the stem lookahead)")


@pytest.mark.slow
def test_10_trainability(acceptance):
    results = {}
    for streaming in (False, True):
        trace = overfit(overfit_config(streaming), steps=200, stop_loss=0.1)
        results[streaming] = trace[-1]
    ok = all(r.accuracy == 1.0 and r.loss < 0.1 for r in results.values())
    detail = "; ".join(f"{'streaming' if s else 'swinlip'}: step {r.step}, loss {r.loss:.4f}, "
                       f"acc {r.accuracy:.2f}" for s, r in results.items())
    assert acceptance(10, "trainability", ok, detail)


def test_11_round_trips(acceptance, tmp_path):
    checks = {}
    rng = Rng(11)
    same = True
    for lead, m, nh, nw in itertools.product((1, 3), (1, 2, 4), (1, 2), (1, 3)):
        x = Tensor(rng.normal((lead, nh * m, nw * m, 5)))
        back = window_reverse(window_partition(x, m), m, nh * m, nw * m, (lead,))
        same &= back.data.tobytes() == x.data.tobytes()
    checks["partition"] = same
    x = Tensor(rng.normal((2, 8, 8, 3)))
    checks["shift"] = all(cyclic_shift(cyclic_shift(x, s), -s).data.tobytes() == x.data.tobytes()
                          for s in range(8))
    cfg = ModelConfig()
    store = ParamStore.from_model(build(cfg), cfg)
    save_weights(store, tmp_path / "w.slwz")
    back = load_weights(tmp_path / "w.slwz", cfg)
    checks["weights"] = back.names() == store.names() and all(
        back.entries[k].tobytes() == store.entries[k].tobytes() for k in store.names())
    ok_io = True
    for dtype in (np.float32, np.float64):
        arr = rng.normal((3, 4, 5, 1)).astype(dtype)
        write_tensor(tmp_path / "t.slt", arr)
        got = read_tensor(tmp_path / "t.slt").data
        ok_io &= got.dtype == dtype and got.tobytes() == arr.tobytes()
    checks["tensor file"] = ok_io
    ok = all(checks.values())
    assert acceptance(11, "round-trip exactness", ok,
                      ", ".join(f"{k} {'exact' if v else 'DIFFERS'}" for k, v in checks.items()))
