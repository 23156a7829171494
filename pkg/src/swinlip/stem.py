"""3D spatio-temporal stem: one Conv3D, batch norm and an activation.

The SwinLip preset uses a (3,5,5) kernel at stride 1 with (1,2,2) padding so
the clip keeps its T x H x W extent and only gains channels.  The
conventional lip-reading frontend uses (5,7,7) at stride (1,2,2) and halves
the spatial extent.
"""

from __future__ import annotations

from dataclasses import replace

from . import nn
from .config import SWINLIP_STEM, StemConfig


class VideoStem(nn.Module):
    def __init__(self, cfg: StemConfig, rng, in_channels=1):
        super().__init__()
        self.cfg = cfg
        self.conv = nn.Conv(cfg.kernel, in_channels, cfg.out_channels, rng,
                            stride=cfg.stride, pad=cfg.pad)
        self.norm = nn.BatchNorm(cfg.out_channels) if cfg.norm else None
        if cfg.activation == "prelu":
            self.act = nn.PReLU(cfg.out_channels)
        else:
            self.act = nn.ReLU()

    def forward(self, clip):
        """``clip [*batch, T, H, W, 1]`` -> ``[*batch, T', H', W', C]``."""
        x = self.conv(clip)
        if self.norm is not None:
            x = self.norm(x)
        return self.act(x)

    def cost(self, shape, prefix=""):
        items = [("conv", self.conv)]
        if self.norm is not None:
            items.append(("norm", self.norm))
        items.append(("act", self.act))
        return nn.sequential_cost(items, shape, prefix)


def stem_variant_cost_probe(stem_cfg: StemConfig, base=None):
    """Full-encoder cost with the stem swapped for ``stem_cfg``.

    Channels and the output extent must stay compatible with the patch grid,
    so only kernel/stride/padding of the SwinLip stem are taken from
    ``stem_cfg``.
    """
    from .config import ModelConfig
    from .cost import count_costs
    from .zoo import build

    base = base or ModelConfig()
    stem = replace(SWINLIP_STEM, kernel=stem_cfg.kernel, stride=stem_cfg.stride, pad=stem_cfg.pad,
                   out_channels=base.stem.out_channels)
    cfg = replace(base, stem=stem)
    model = build(cfg)
    return count_costs(model, (cfg.input_shape[0], cfg.input_shape[1], cfg.input_shape[2], 1))
