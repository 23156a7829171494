"""Model configuration records, presets and the ``key = value`` config format.

Config files are line based::

    # comments start with '#'
    model.kind = swinlip
    stem.kernel = 3,5,5
    stage1.window = 4
    temporal.streaming = true

Omitted keys take the SwinLip defaults.  Unknown keys and invalid values
raise :class:`ConfigError` carrying the line number.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

from .errors import ConfigError

KINDS = ("swinlip", "swinlip_streaming", "resnet18_frontend")


@dataclass(frozen=True)
class StemConfig:
    kernel: tuple = (3, 5, 5)
    stride: tuple = (1, 1, 1)
    out_channels: int = 24
    pad: tuple = (1, 2, 2)
    norm: bool = True
    activation: str = "prelu"


SWINLIP_STEM = StemConfig()
BASELINE_STEM = StemConfig(kernel=(5, 7, 7), stride=(1, 2, 2), out_channels=64, pad=(2, 3, 3),
                           activation="relu")


@dataclass(frozen=True)
class StageSpec:
    channels: int
    depth: int
    window: int
    heads: int
    merge_factor: int = 2

    @property
    def head_dim(self):
        return self.channels // self.heads


SWINLIP_STAGES = (
    StageSpec(64, 2, 4, 2),
    StageSpec(128, 2, 4, 4),
    StageSpec(256, 6, 2, 8),
)


@dataclass(frozen=True)
class TemporalBlockConfig:
    dim: int = 512
    heads: int = 16
    ffn_hidden: int = 512
    conv_expansion: int = 2
    dw_kernel: int = 15
    streaming: bool = False
    dropout: float = 0.1
    blocks: int = 2


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "swinlip"
    stem: StemConfig = SWINLIP_STEM
    patch_size: int = 11
    stages: tuple = SWINLIP_STAGES
    temporal: TemporalBlockConfig = TemporalBlockConfig()
    mlp_ratio: int = 4
    drop_path: float = 0.0
    seed: int = 0
    input_shape: tuple = (29, 88, 88)
    # config-file line of each explicitly set key, for error messages
    lines: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    @property
    def streaming(self):
        return self.temporal.streaming


def swinlip(**kw):
    return ModelConfig(**kw)


def swinlip_streaming(**kw):
    return ModelConfig(kind="swinlip_streaming", temporal=TemporalBlockConfig(streaming=True), **kw)


def resnet18_frontend(**kw):
    return ModelConfig(kind="resnet18_frontend", stem=BASELINE_STEM, **kw)


def reduced(streaming=False, frames=3, size=24, patch=3, stem_channels=4, dw_kernel=5, **kw):
    """Small SwinLip with the full topology, for gradient checks and overfitting.

    8x8 patch grid (so stage 1 exercises the shifted-window mask), stage
    channels 16/32/64, depths 2/2/2 and a 128-wide temporal module.
    """
    return ModelConfig(
        kind="swinlip_streaming" if streaming else "swinlip",
        stem=StemConfig(out_channels=stem_channels),
        patch_size=patch,
        stages=(StageSpec(16, 2, 4, 2), StageSpec(32, 2, 4, 2), StageSpec(64, 2, 2, 4)),
        temporal=TemporalBlockConfig(dim=128, heads=4, ffn_hidden=128, dw_kernel=dw_kernel,
                                     streaming=streaming),
        input_shape=(frames, size, size),
        **kw,
    )


def with_stem(cfg, kernel, stride=(1, 1, 1)):
    """Swap the stem kernel keeping the output extents ("same" padding)."""
    pad = tuple((k - 1) // 2 for k in kernel)
    return replace(cfg, stem=replace(cfg.stem, kernel=tuple(kernel), stride=tuple(stride), pad=pad))


# parsing

def _int(v):
    return int(v)


def _float(v):
    return float(v)


def _triple(v):
    parts = [p for p in v.strip("()[] ").split(",") if p.strip()]
    if len(parts) != 3:
        raise ValueError(f"expected three comma-separated integers, got {v!r}")
    return tuple(int(p) for p in parts)


def _bool(v):
    low = v.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected true/false, got {v!r}")


def _kind(v):
    if v not in KINDS:
        raise ValueError(f"model.kind must be one of {', '.join(KINDS)}")
    return v


def _activation(v):
    if v not in ("prelu", "relu"):
        raise ValueError("stem.activation must be prelu or relu")
    return v


_SCALAR_KEYS = {
    "model.kind": _kind,
    "seed": _int,
    "input.frames": _int,
    "input.height": _int,
    "input.width": _int,
    "stem.kernel": _triple,
    "stem.stride": _triple,
    "stem.pad": _triple,
    "stem.channels": _int,
    "stem.norm": _bool,
    "stem.activation": _activation,
    "patch.size": _int,
    "swin.mlp_ratio": _int,
    "swin.drop_path": _float,
    "temporal.dim": _int,
    "temporal.heads": _int,
    "temporal.ffn_hidden": _int,
    "temporal.conv_expansion": _int,
    "temporal.kernel": _int,
    "temporal.streaming": _bool,
    "temporal.blocks": _int,
    "temporal.dropout": _float,
}
_STAGE_FIELDS = ("channels", "depth", "window", "heads")
NUM_STAGES = len(SWINLIP_STAGES)
KEYS = dict(_SCALAR_KEYS)
for _i in range(1, NUM_STAGES + 1):
    for _f in _STAGE_FIELDS:
        KEYS[f"stage{_i}.{_f}"] = _int

# keys that do not change parameter shapes; excluded from the config hash
_NON_ARCH_KEYS = ("seed", "input.frames", "input.height", "input.width",
                  "temporal.dropout", "swin.drop_path")


def parse_config(text: str) -> ModelConfig:
    values, lines = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        try:
            values[key] = KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"malformed value for {key}: {exc}", lineno) from None
        lines[key] = lineno
    cfg = from_values(values, lines)
    validate(cfg)
    return cfg


def from_values(values, lines=None):
    lines = lines or {}
    kind = values.get("model.kind", "swinlip")
    streaming = values.get("temporal.streaming")
    if kind == "swinlip_streaming":
        if streaming is False:
            raise ConfigError("model.kind = swinlip_streaming contradicts temporal.streaming = false",
                              lines.get("temporal.streaming"))
        streaming = True
    elif kind == "swinlip" and streaming:
        kind = "swinlip_streaming"
    base = resnet18_frontend() if kind == "resnet18_frontend" else ModelConfig()
    stem = base.stem
    stem = StemConfig(
        kernel=values.get("stem.kernel", stem.kernel),
        stride=values.get("stem.stride", stem.stride),
        out_channels=values.get("stem.channels", stem.out_channels),
        pad=values.get("stem.pad", stem.pad if "stem.kernel" not in values
                       else tuple((k - 1) // 2 for k in values["stem.kernel"])),
        norm=values.get("stem.norm", stem.norm),
        activation=values.get("stem.activation", stem.activation),
    )
    stages = tuple(
        StageSpec(*(values.get(f"stage{i + 1}.{f}", getattr(s, f)) for f in _STAGE_FIELDS))
        for i, s in enumerate(base.stages))
    t = base.temporal
    temporal = TemporalBlockConfig(
        dim=values.get("temporal.dim", t.dim),
        heads=values.get("temporal.heads", t.heads),
        ffn_hidden=values.get("temporal.ffn_hidden", t.ffn_hidden),
        conv_expansion=values.get("temporal.conv_expansion", t.conv_expansion),
        dw_kernel=values.get("temporal.kernel", t.dw_kernel),
        streaming=bool(streaming),
        dropout=values.get("temporal.dropout", t.dropout),
        blocks=values.get("temporal.blocks", t.blocks),
    )
    shape = base.input_shape
    return ModelConfig(
        kind=kind, stem=stem, patch_size=values.get("patch.size", base.patch_size), stages=stages,
        temporal=temporal, mlp_ratio=values.get("swin.mlp_ratio", base.mlp_ratio),
        drop_path=values.get("swin.drop_path", base.drop_path), seed=values.get("seed", base.seed),
        input_shape=(values.get("input.frames", shape[0]), values.get("input.height", shape[1]),
                     values.get("input.width", shape[2])),
        lines=dict(lines))


def to_values(cfg: ModelConfig) -> dict:
    v = {
        "model.kind": cfg.kind,
        "seed": cfg.seed,
        "input.frames": cfg.input_shape[0],
        "input.height": cfg.input_shape[1],
        "input.width": cfg.input_shape[2],
        "stem.kernel": cfg.stem.kernel,
        "stem.stride": cfg.stem.stride,
        "stem.pad": cfg.stem.pad,
        "stem.channels": cfg.stem.out_channels,
        "stem.norm": cfg.stem.norm,
        "stem.activation": cfg.stem.activation,
    }
    if cfg.kind != "resnet18_frontend":
        v.update({
            "patch.size": cfg.patch_size,
            "swin.mlp_ratio": cfg.mlp_ratio,
            "swin.drop_path": cfg.drop_path,
            "temporal.dim": cfg.temporal.dim,
            "temporal.heads": cfg.temporal.heads,
            "temporal.ffn_hidden": cfg.temporal.ffn_hidden,
            "temporal.conv_expansion": cfg.temporal.conv_expansion,
            "temporal.kernel": cfg.temporal.dw_kernel,
            "temporal.streaming": cfg.temporal.streaming,
            "temporal.blocks": cfg.temporal.blocks,
            "temporal.dropout": cfg.temporal.dropout,
        })
        for i, s in enumerate(cfg.stages, start=1):
            for f in _STAGE_FIELDS:
                v[f"stage{i}.{f}"] = getattr(s, f)
    return v


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(x) for x in value)
    return str(value)


def format_config(cfg: ModelConfig) -> str:
    """Canonical text: every key, sorted, one per line."""
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in sorted(to_values(cfg).items()))


def config_hash(cfg: ModelConfig) -> bytes:
    """SHA-256 over the canonical text of the shape-determining keys."""
    text = "".join(f"{k} = {_fmt(v)}\n" for k, v in sorted(to_values(cfg).items())
                   if k not in _NON_ARCH_KEYS)
    return hashlib.sha256(text.encode("utf-8")).digest()


# validation

def stem_output_shape(cfg: ModelConfig, frames=None, height=None, width=None):
    t, h, w = cfg.input_shape
    t, h, w = frames or t, height or h, width or w
    out = []
    for n, k, s, p in zip((t, h, w), cfg.stem.kernel, cfg.stem.stride, cfg.stem.pad):
        o = (n + 2 * p - k) // s + 1 if n + 2 * p >= k else 0
        out.append(o)
    return tuple(out)


def stage_grids(cfg: ModelConfig, height=None, width=None):
    """Patch-grid side lengths entering each stage."""
    _, h, w = stem_output_shape(cfg, height=height, width=width)
    gh, gw = h // cfg.patch_size, w // cfg.patch_size
    grids = []
    for _ in cfg.stages:
        grids.append((gh, gw))
        gh, gw = gh // 2, gw // 2
    return grids


def effective_window(window, grid):
    """Windows no smaller than the grid collapse to the whole grid, unshifted."""
    side = min(grid)
    if window >= side:
        return side, 0
    return window, window // 2


def validate(cfg: ModelConfig, height=None, width=None) -> None:
    ln = cfg.lines.get
    if cfg.kind not in KINDS:
        raise ConfigError(f"unknown model kind {cfg.kind!r}", ln("model.kind"))
    for key, val in (("stem.kernel", cfg.stem.kernel), ("stem.stride", cfg.stem.stride)):
        if len(val) != 3 or min(val) < 1:
            raise ConfigError(f"{key} must be three positive integers, got {val}", ln(key))
    if len(cfg.stem.pad) != 3 or min(cfg.stem.pad) < 0:
        raise ConfigError(f"stem.pad must be three non-negative integers, got {cfg.stem.pad}",
                          ln("stem.pad"))
    if cfg.stem.out_channels < 1:
        raise ConfigError("stem.channels must be positive", ln("stem.channels"))
    t, h, w = cfg.input_shape
    height, width = height or h, width or w
    if min(t, height, width) < 1:
        raise ConfigError(f"input shape must be positive, got {(t, height, width)}", ln("input.frames"))
    so = stem_output_shape(cfg, height=height, width=width)
    if min(so) < 1:
        raise ConfigError(f"stem kernel {cfg.stem.kernel} does not fit input {(t, height, width)}",
                          ln("stem.kernel"))
    if cfg.kind == "resnet18_frontend":
        return

    p = cfg.patch_size
    if p < 1:
        raise ConfigError("patch.size must be positive", ln("patch.size"))
    if so[1] % p or so[2] % p:
        raise ConfigError(f"stem output {so[1]}x{so[2]} is not divisible by patch size {p}",
                          ln("patch.size") or ln("input.height"))
    gh, gw = so[1] // p, so[2] // p
    for i, s in enumerate(cfg.stages, start=1):
        key = f"stage{i}"
        if s.channels < 1 or s.heads < 1 or s.window < 1:
            raise ConfigError(f"{key}: channels, heads and window must be positive", ln(f"{key}.channels"))
        if s.channels % s.heads:
            raise ConfigError(f"{key}.channels={s.channels} not divisible by {key}.heads={s.heads}",
                              ln(f"{key}.heads") or ln(f"{key}.channels"))
        if s.depth < 2 or s.depth % 2:
            raise ConfigError(f"{key}.depth={s.depth} must be a positive even number "
                              "(blocks come in window/shifted-window pairs)", ln(f"{key}.depth"))
        m, _ = effective_window(s.window, (gh, gw))
        if gh % m or gw % m:
            raise ConfigError(f"{key}.window={s.window} does not divide the {gh}x{gw} patch grid",
                              ln(f"{key}.window"))
        if gh % 2 or gw % 2:
            raise ConfigError(f"{key}: patch merge needs an even grid, got {gh}x{gw}",
                              ln("patch.size") or ln("input.height"))
        if i > 1 and s.channels != 2 * cfg.stages[i - 2].channels:
            raise ConfigError(f"{key}.channels must be twice stage{i - 1}.channels "
                              "(patch merging doubles channels)", ln(f"{key}.channels"))
        gh, gw = gh // 2, gw // 2
    tc = cfg.temporal
    if tc.dim != 2 * cfg.stages[-1].channels:
        raise ConfigError(f"temporal.dim={tc.dim} must equal twice the last stage channels "
                          f"({2 * cfg.stages[-1].channels})", ln("temporal.dim"))
    if tc.heads < 1 or tc.dim % tc.heads:
        raise ConfigError(f"temporal.dim={tc.dim} not divisible by temporal.heads={tc.heads}",
                          ln("temporal.heads"))
    if tc.dw_kernel < 1 or tc.dw_kernel % 2 == 0:
        raise ConfigError(f"temporal.kernel={tc.dw_kernel} must be odd", ln("temporal.kernel"))
    if tc.blocks < 1 or tc.ffn_hidden < 1 or tc.conv_expansion != 2:
        raise ConfigError("temporal.blocks and temporal.ffn_hidden must be positive and "
                          "temporal.conv_expansion must be 2 (GLU halves it)",
                          ln("temporal.conv_expansion") or ln("temporal.blocks"))
    if not 0.0 <= tc.dropout < 1.0:
        raise ConfigError("temporal.dropout must be in [0, 1)", ln("temporal.dropout"))
