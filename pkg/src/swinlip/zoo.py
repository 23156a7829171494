"""Complete encoders, their parameter stores and the SLWZ weight container.

Weight files (little-endian)::

    b"SLWZ" | u16 version | 32-byte config hash | u32 count
    count x (u16 name length | utf-8 name | SLT1 tensor)

Entries hold trainable parameters followed by norm running statistics.
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .autodiff import Tensor, mean
from .config import ModelConfig, config_hash, stem_output_shape, validate
from .errors import (ConfigError, ConfigHashError, DimensionError, MagicError, TruncatedFileError,
                     VersionError, WeightFileError)
from .rng import Rng
from .stem import VideoStem
from .swin import SwinSpatial
from .temporal import TemporalModule
from .tensorio import encode_tensor, read_tensor_from

WEIGHTS_MAGIC = b"SLWZ"
WEIGHTS_VERSION = 1
# dropout / drop-path masks come from a stream independent of initialisation
_NOISE_KEY = 0x9E3779B97F4A7C15


def _as_clip(clip, dtype):
    x = clip if isinstance(clip, Tensor) else Tensor(np.asarray(clip, dtype=dtype))
    if x.ndim < 4 or x.shape[-1] != 1:
        raise DimensionError(f"clip must be [..., T, H, W, 1], got {x.shape}")
    return x


class SwinLip(nn.Module):
    """Stem -> per-frame Swin hierarchy -> temporal blocks: ``[*b, T, H, W, 1] -> [*b, T, 512]``."""

    def __init__(self, cfg: ModelConfig, rng: Rng, noise: Rng | None = None):
        super().__init__()
        self.cfg = cfg
        _, h, w = stem_output_shape(cfg)
        self.grid = (h // cfg.patch_size, w // cfg.patch_size)
        self.stem = VideoStem(cfg.stem, rng)
        self.spatial = SwinSpatial(cfg, cfg.stem.out_channels, self.grid, rng, noise)
        self.temporal = TemporalModule(cfg.temporal, rng, noise)

    def check_input(self, shape):
        *_, t, h, w, _ = shape
        validate(self.cfg, height=h, width=w)
        if (h, w) != tuple(self.cfg.input_shape[1:]):
            raise ConfigError(f"model was built for {self.cfg.input_shape[1]}x"
                              f"{self.cfg.input_shape[2]} frames, got {h}x{w}")

    def spatial_features(self, clip):
        """Per-frame pooled features ``g_z`` before the temporal module."""
        x = _as_clip(clip, self.dtype)
        self.check_input(x.shape)
        return self.spatial(self.stem(x))

    def forward(self, clip):
        return self.temporal(self.spatial_features(clip))

    def cost(self, shape, prefix=""):
        rows, s = self.stem.cost(shape, prefix + "stem.")
        r, s = self.spatial.cost(s, prefix + "spatial.")
        rows += r
        r, s = self.temporal.cost(s, prefix + "temporal.")
        return rows + r, s


class BasicBlock(nn.Module):
    def __init__(self, cin, cout, stride, rng):
        super().__init__()
        self.conv1 = nn.Conv((3, 3), cin, cout, rng, stride=stride, pad=1, bias=False)
        self.bn1 = nn.BatchNorm(cout)
        self.conv2 = nn.Conv((3, 3), cout, cout, rng, pad=1, bias=False)
        self.bn2 = nn.BatchNorm(cout)
        self.relu = nn.ReLU()
        self.down = None
        if stride != 1 or cin != cout:
            self.down = nn.Conv((1, 1), cin, cout, rng, stride=stride, bias=False)
            self.down_bn = nn.BatchNorm(cout)

    def forward(self, x):
        y = self.relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        skip = x if self.down is None else self.down_bn(self.down(x))
        return self.relu(y + skip)

    def cost(self, shape, prefix=""):
        rows, out = nn.sequential_cost(
            [("conv1", self.conv1), ("bn1", self.bn1), ("conv2", self.conv2), ("bn2", self.bn2)],
            shape, prefix)
        if self.down is not None:
            r, _ = nn.sequential_cost([("down", self.down), ("down_bn", self.down_bn)], shape, prefix)
            rows += r
        return rows, out


class ResNet18Frontend(nn.Module):
    """Baseline lip-reading frontend: 3D stem, max pool, per-frame ResNet-18 trunk, global pool."""

    WIDTHS = (64, 128, 256, 512)

    def __init__(self, cfg: ModelConfig, rng: Rng):
        super().__init__()
        self.cfg = cfg
        self.stem = VideoStem(cfg.stem, rng)
        self.pool = nn.MaxPool((1, 3, 3), stride=(1, 2, 2), pad=(0, 1, 1))
        self.layers = nn.ModuleList()
        cin = cfg.stem.out_channels
        for i, width in enumerate(self.WIDTHS):
            stride = 1 if i == 0 else 2
            self.layers.append(nn.ModuleList([BasicBlock(cin, width, stride, rng),
                                               BasicBlock(width, width, 1, rng)]))
            cin = width

    def _blocks(self):
        return [(f"layers.{i}.{j}", b) for i, layer in enumerate(self.layers)
                for j, b in enumerate(layer)]

    def forward(self, clip):
        x = _as_clip(clip, self.dtype)
        validate(self.cfg, height=x.shape[-3], width=x.shape[-2])
        x = self.pool(self.stem(x))
        for _, blk in self._blocks():
            x = blk(x)
        return mean(x, axis=(-3, -2))

    def cost(self, shape, prefix=""):
        items = [("stem", self.stem), ("pool", self.pool)] + self._blocks()
        rows, s = nn.sequential_cost(items, shape, prefix)
        return rows, tuple(s[:-3]) + (s[-1],)


def build(cfg: ModelConfig, rng: Rng | None = None):
    """Validate ``cfg`` and initialise a model in eval mode from ``rng`` (default: seeded by cfg)."""
    validate(cfg)
    rng = rng if rng is not None else Rng(cfg.seed)
    if cfg.kind == "resnet18_frontend":
        model = ResNet18Frontend(cfg, rng)
    else:
        model = SwinLip(cfg, rng, noise=Rng(cfg.seed ^ _NOISE_KEY))
    return model.eval()


def build_resnet18_frontend(cfg: ModelConfig | None = None):
    from .config import resnet18_frontend
    return build(cfg or resnet18_frontend())


@dataclass
class ParamStore:
    """Ordered ``name -> array`` map with the metadata needed to reload it safely."""

    entries: OrderedDict = field(default_factory=OrderedDict)
    config_hash: bytes = bytes(32)
    seed: int = 0
    version: int = WEIGHTS_VERSION

    @classmethod
    def from_model(cls, model, cfg: ModelConfig | None = None):
        cfg = cfg or model.cfg
        entries = OrderedDict((n, p.data.copy()) for n, p in model.named_parameters())
        for n, b in model.named_buffers():
            entries[n] = np.array(b, copy=True)
        return cls(entries, config_hash(cfg), cfg.seed)

    def __len__(self):
        return len(self.entries)

    def names(self):
        return list(self.entries)

    def apply(self, model):
        """Copy entries into ``model``; nothing is written unless every entry fits."""
        params = dict(model.named_parameters())
        owners = {}
        for m_name, m in _named_modules(model):
            for b in m._buffers:
                owners[m_name + b] = (m, b)
        expected = list(params) + list(owners)
        if sorted(expected) != sorted(self.entries):
            missing = sorted(set(expected) - set(self.entries))
            extra = sorted(set(self.entries) - set(expected))
            raise WeightFileError(f"store does not match model: missing {missing[:5]}, extra {extra[:5]}")
        for name, arr in self.entries.items():
            cur = params[name].data if name in params else owners[name][0]._buffers[owners[name][1]]
            if cur.shape != arr.shape:
                raise WeightFileError(f"{name}: shape {arr.shape} does not match model {cur.shape}")
        for name, arr in self.entries.items():
            if name in params:
                params[name].data = arr.astype(params[name].dtype, copy=True)
            else:
                m, b = owners[name]
                cast = arr.astype(m._buffers[b].dtype, copy=True)
                m._buffers[b] = cast
                object.__setattr__(m, b, cast)
        return model


def _named_modules(module, prefix=""):
    yield prefix, module
    for name, child in module._children.items():
        yield from _named_modules(child, f"{prefix}{name}.")


def encode_weights(store: ParamStore) -> bytes:
    if len(store.config_hash) != 32:
        raise WeightFileError("config hash must be 32 bytes")
    out = io.BytesIO()
    out.write(WEIGHTS_MAGIC + struct.pack("<H", store.version) + store.config_hash)
    out.write(struct.pack("<I", len(store.entries)))
    for name, arr in store.entries.items():
        raw = name.encode("utf-8")
        out.write(struct.pack("<H", len(raw)) + raw + encode_tensor(arr))
    return out.getvalue()


def _read(fh, n):
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedFileError(f"weight file ends early: wanted {n} bytes, got {len(buf)}")
    return buf


def decode_weights(buf: bytes, expected_hash: bytes | None = None) -> ParamStore:
    fh = io.BytesIO(buf)
    magic = _read(fh, 4)
    if magic != WEIGHTS_MAGIC:
        raise MagicError(f"not a weight file (magic {magic!r})")
    (version,) = struct.unpack("<H", _read(fh, 2))
    if version != WEIGHTS_VERSION:
        raise VersionError(f"weight format version {version}, expected {WEIGHTS_VERSION}")
    digest = _read(fh, 32)
    if expected_hash is not None and digest != expected_hash:
        raise ConfigHashError("weights were saved for a different model configuration")
    (count,) = struct.unpack("<I", _read(fh, 4))
    entries = OrderedDict()
    for _ in range(count):
        (n,) = struct.unpack("<H", _read(fh, 2))
        name = _read(fh, n).decode("utf-8")
        if name in entries:
            raise WeightFileError(f"duplicate entry {name!r}")
        entries[name] = read_tensor_from(fh).data
    if fh.read(1):
        raise WeightFileError("trailing bytes after the last entry")
    return ParamStore(entries, digest, version=version)


def save_weights(store: ParamStore, path) -> None:
    """Write atomically: the target is replaced only once the file is complete."""
    data = encode_weights(store)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".slwz-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_weights(path, cfg: ModelConfig | None = None) -> ParamStore:
    with open(path, "rb") as fh:
        buf = fh.read()
    return decode_weights(buf, config_hash(cfg) if cfg is not None else None)

