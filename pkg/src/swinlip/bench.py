"""Forward-latency sweep over clip length on synthetic clips."""

from __future__ import annotations

import csv
import io
import os
import platform
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .config import ModelConfig
from .errors import ConfigError
from .rng import Rng
from .zoo import build

WARMUP = 2
MIN_REPS = 5


@dataclass
class BenchRow:
    frames: int
    mean_ms: float
    std_ms: float
    reps: int


@dataclass
class BenchResult:
    model: str
    rows: list = field(default_factory=list)
    machine: str = ""

    def mean_ms(self, frames):
        return next(r.mean_ms for r in self.rows if r.frames == frames)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "T", "mean_ms", "std_ms", "reps"])
        for r in self.rows:
            w.writerow([self.model, r.frames, f"{r.mean_ms:.3f}", f"{r.std_ms:.3f}", r.reps])
        return buf.getvalue()


def machine_note(threads):
    return (f"{platform.processor() or platform.machine()}, {os.cpu_count()} cpus, "
            f"python {platform.python_version()}, numpy {np.__version__}, threads={threads}")


def run_bench(cfg: ModelConfig, t_values, reps=MIN_REPS, warmup=WARMUP, threads=1, seed=0,
              model=None) -> BenchResult:
    """Time ``reps`` eval-mode forwards per clip length after ``warmup`` discarded runs."""
    if reps < MIN_REPS:
        raise ConfigError(f"--reps must be at least {MIN_REPS}, got {reps}")
    if warmup < WARMUP:
        raise ConfigError(f"at least {WARMUP} warm-up runs are required, got {warmup}")
    model = model if model is not None else build(cfg)
    model.eval()
    _, h, w = cfg.input_shape
    rng = Rng(seed)
    result = BenchResult(cfg.kind, machine=machine_note(threads))
    with threadpool_limits(threads):
        for frames in sorted(set(int(t) for t in t_values)):
            clip = rng.uniform((frames, h, w, 1)).astype(model.dtype)
            for _ in range(warmup):
                model(clip)
            times = []
            for _ in range(reps):
                start = time.perf_counter()
                model(clip)
                times.append((time.perf_counter() - start) * 1e3)
            result.rows.append(BenchRow(frames, float(np.mean(times)), float(np.std(times, ddof=1)), reps))
    return result
