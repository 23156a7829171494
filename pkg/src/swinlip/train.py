"""Desk-scale overfit run: memorise a small synthetic moving-patch task.

Each clip is noise plus a bright square that moves horizontally (class 0)
or vertically (class 1) from a clip-specific start.  Encoder features are
averaged over time, a linear head classifies them, and every parameter is
updated with SGD + momentum on the full batch.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np

from . import ops
from .autodiff import Tape, mean
from .config import ModelConfig, reduced
from .nn import Linear
from .rng import Rng
from .zoo import build


def overfit_config(streaming=False, seed=0) -> ModelConfig:
    """Reduced SwinLip at the task resolution: 8 frames of 88x88, patch 11."""
    cfg = reduced(streaming=streaming, frames=8, size=88, patch=11, stem_channels=4, seed=seed)
    return replace(cfg, temporal=replace(cfg.temporal, dropout=0.0))


def moving_patch_clips(n=16, frames=8, size=88, classes=2, patch=16, seed=0):
    """``(clips [n, T, H, W, 1] float32, labels [n])`` with balanced classes."""
    rng = Rng(seed)
    labels = np.arange(n) % classes
    clips = rng.normal((n, frames, size, size, 1), std=0.1)
    travel = size - patch
    speed = max(1, travel // frames)
    starts = rng.integers(0, travel - speed * (frames - 1) + 1, (n, 2))
    for i in range(n):
        direction = labels[i] % 2
        along, across = starts[i]
        for t in range(frames):
            pos = along + speed * t
            if direction == 0:
                r, c = across, pos
            else:
                r, c = pos, across
            # further classes differ by patch brightness
            clips[i, t, r:r + patch, c:c + patch, 0] += 1.0 + labels[i] // 2
    clips = (clips - clips.mean()) / clips.std()
    return clips.astype(np.float32), labels


@dataclass
class StepRecord:
    step: int
    loss: float
    accuracy: float


class Classifier:
    def __init__(self, cfg: ModelConfig, classes: int):
        self.encoder = build(cfg)
        self.head = Linear(cfg.temporal.dim, classes, Rng(cfg.seed + 1))

    def parameters(self):
        return self.encoder.parameters() + self.head.parameters()

    def train(self, mode=True):
        self.encoder.train(mode)
        self.head.train(mode)

    def __call__(self, clips):
        return self.head(mean(self.encoder(clips), axis=-2))


def overfit(cfg: ModelConfig, steps=200, classes=2, lr=0.05, momentum=0.9, clips=16,
            seed=0, log=None, stop_loss=None):
    """Train on the synthetic task; returns the per-step trace.

    Accuracy and loss are measured on the batch the step was computed on.
    With ``stop_loss`` set, training ends at the first step that classifies
    every clip with loss below it.  A non-finite loss raises
    ``FloatingPointError``.
    """
    t, h, w = cfg.input_shape
    x, y = moving_patch_clips(clips, t, h, classes, seed=seed)
    model = Classifier(cfg, classes)
    model.train()
    params = model.parameters()
    velocity = [np.zeros_like(p.data) for p in params]
    trace = []
    for step in range(steps):
        with Tape() as tape:
            logits = model(x)
            loss = ops.cross_entropy(logits, y)
        grads = tape.backward(loss)
        value = float(loss.data)
        acc = float((logits.data.argmax(axis=-1) == y).mean())
        trace.append(StepRecord(step, value, acc))
        if log is not None:
            log(trace[-1])
        if not math.isfinite(value):
            raise FloatingPointError(f"loss diverged at step {step}: {value}")
        if stop_loss is not None and acc == 1.0 and value < stop_loss:
            break
        for p, v in zip(params, velocity):
            g = grads.get(p)
            if g is None:
                continue
            v *= momentum
            v += g
            p.data -= lr * v
    return trace


def trace_csv(trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "loss", "accuracy"])
    for r in trace:
        w.writerow([r.step, f"{r.loss:.6f}", f"{r.accuracy:.4f}"])
    return buf.getvalue()
