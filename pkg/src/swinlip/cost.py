"""Analytical parameter and multiply-accumulate accounting.

Counts come from a shape walk over the built model (``Module.cost``), never
from running it.  Conventions:

* conv: ``out_elems * k_elems * Cin / groups``; linear: ``out_elems * in_features``
* attention: projections as linears plus ``2 * B * heads * N^2 * d`` for the
  score and value products (relative attention adds its ``2T-1`` offset term)
* norms, activations, softmax, pooling and residual additions: 0
* one MAC is reported as ``mac_to_flop`` FLOPs (1 by default)
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from .nn import CostRow

CONVENTION = "1 MAC counted as 1 FLOP"

_EXCLUDED = ("norms, activations, softmax, pooling and residual additions are not counted "
             "(0 MACs)")


@dataclass
class CostReport:
    rows: list
    input_shape: tuple
    model_kind: str = ""
    mac_to_flop: float = 1.0
    assumptions: list = field(default_factory=list)

    @property
    def total_params(self):
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self):
        return sum(r.macs for r in self.rows)

    @property
    def total_flops(self):
        return self.total_macs * self.mac_to_flop

    @property
    def convention(self):
        if self.mac_to_flop == 1.0:
            return CONVENTION
        return f"1 MAC counted as {self.mac_to_flop:g} FLOP"

    def flops(self, row: CostRow):
        return row.macs * self.mac_to_flop

    def module_totals(self, depth=1):
        """Params and MACs grouped by the first ``depth`` name components."""
        out = {}
        for r in self.rows:
            key = ".".join(r.name.split(".")[:depth])
            p, m = out.get(key, (0, 0))
            out[key] = (p + r.params, m + r.macs)
        return out

    def summary(self):
        return (f"params {self.total_params / 1e6:.2f} M, "
                f"MACs {self.total_macs / 1e9:.2f} G ({self.convention})")

    def to_text(self):
        width = max([len(r.name) for r in self.rows] + [5])
        lines = [f"model {self.model_kind}  input {'x'.join(map(str, self.input_shape))}",
                 f"{'layer':<{width}}  {'params':>10}  {'FLOPs':>14}  out_shape"]
        for r in self.rows:
            lines.append(f"{r.name:<{width}}  {r.params:>10,}  {self.flops(r):>14,.0f}  "
                         f"{'x'.join(map(str, r.out_shape))}")
        lines.append(f"{'total':<{width}}  {self.total_params:>10,}  {self.total_flops:>14,.0f}")
        lines.append("")
        for name, (p, m) in self.module_totals().items():
            lines.append(f"{name}: params {p / 1e6:.3f} M, MACs {m / 1e9:.3f} G")
        lines.append(self.summary())
        lines.append(f"note: {self.convention}")
        lines.extend(f"assumption: {a}" for a in self.assumptions)
        return "\n".join(lines) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "params", "macs", "out_shape"])
        for r in self.rows:
            w.writerow([r.name, r.params, _num(self.flops(r)), "x".join(map(str, r.out_shape))])
        w.writerow(["total", self.total_params, _num(self.total_flops), ""])
        return buf.getvalue()


def _num(v):
    return int(v) if float(v).is_integer() else v


def _assumptions(model):
    notes = [_EXCLUDED]
    cfg = getattr(model, "cfg", None)
    kind = getattr(cfg, "kind", "")
    if kind == "resnet18_frontend":
        notes.append("baseline frontend: (1,3,3)/(1,2,2) max pool after the stem and a standard "
                     "per-frame ResNet-18 trunk, reconstructed from the common lip-reading frontend")
        return notes
    spatial = getattr(model, "spatial", None)
    if spatial is not None and spatial.shift_clamped:
        stages = ", ".join(str(s) for s in spatial.shift_clamped)
        notes.append(f"stage(s) {stages}: window covers the whole grid, shift clamped to 0 "
                     "(attention cost unchanged)")
    if cfg is not None and not cfg.streaming:
        notes.append("temporal MHSA uses relative positional attention (positional projection "
                     "plus two bias vectors), reconstructed from the streaming parameter delta")
    if cfg is not None and cfg.streaming:
        notes.append("streaming: temporal MHSA removed, causal depthwise convolution; the stem "
                     "keeps its symmetric one-frame lookahead")
    notes.append("dropout and drop-path carry no parameters or MACs")
    return notes


def count_costs(model, input_shape, mac_to_flop=1.0) -> CostReport:
    """Per-layer report for ``input_shape`` (``[T, H, W, 1]`` or with leading batch axes)."""
    from .config import validate
    from .errors import ConfigError

    shape = tuple(int(s) for s in input_shape)
    cfg = getattr(model, "cfg", None)
    if cfg is not None:
        if len(shape) < 4 or shape[-1] != 1:
            raise ConfigError(f"input shape must be [T, H, W, 1], got {shape}")
        validate(cfg, height=shape[-3], width=shape[-2])
    rows, _ = model.cost(shape)
    return CostReport(rows, shape, getattr(cfg, "kind", type(model).__name__), mac_to_flop,
                      _assumptions(model))


def count_params(model):
    """``({row name: params}, total)`` from parameter shapes; independent of input size."""
    per = {name: p.size for name, p in model.named_parameters()}
    return per, sum(per.values())


def count_macs(model, input_shape):
    report = count_costs(model, input_shape)
    return {r.name: r.macs for r in report.rows}, report.total_macs


@dataclass
class RowDelta:
    name: str
    params: int
    macs: int
    only_in: str = ""   # "a" or "b" when the row exists in one report only


def diff_reports(a: CostReport, b: CostReport):
    """Row-aligned ``a - b`` deltas, in ``a``'s order followed by rows only in ``b``."""
    bmap = {r.name: r for r in b.rows}
    amap = {r.name: r for r in a.rows}
    out = []
    for r in a.rows:
        o = bmap.get(r.name)
        if o is None:
            out.append(RowDelta(r.name, r.params, r.macs, "a"))
        else:
            out.append(RowDelta(r.name, r.params - o.params, r.macs - o.macs))
    for r in b.rows:
        if r.name not in amap:
            out.append(RowDelta(r.name, -r.params, -r.macs, "b"))
    return out
