"""``swinlip`` command line: describe, init, forward, bench, gradcheck, overfit.

Exit codes: 0 success, 1 acceptance failure, 2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .config import ModelConfig, parse_config
from .errors import ConfigError, DimensionError, WeightFileError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


def load_config(path) -> ModelConfig:
    if path is None:
        return ModelConfig()
    return parse_config(Path(path).read_text())


def _write(path, text):
    Path(path).write_text(text)


def cmd_describe(args):
    from .cost import count_costs
    from .zoo import build

    cfg = load_config(args.config)
    t, h, w = cfg.input_shape
    report = count_costs(build(cfg), (args.frames or t, h, w, 1))
    print(report.to_text(), end="")
    if args.csv:
        _write(args.csv, report.to_csv())
    return EXIT_OK


def _model_with_weights(cfg, weights):
    from .zoo import build, load_weights

    model = build(cfg)
    if weights:
        load_weights(weights, cfg).apply(model)
    return model


def cmd_init(args):
    from .zoo import ParamStore, build, save_weights

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    save_weights(ParamStore.from_model(build(cfg), cfg), args.output)
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_forward(args):
    from .tensorio import read_tensor, write_tensor

    cfg = load_config(args.config)
    clip = read_tensor(args.input)
    if clip.ndim != 4 or clip.shape[-1] != 1:
        raise DimensionError(f"input must be T x H x W x 1, got {clip.shape}")
    cfg = replace(cfg, input_shape=clip.shape[:3])
    model = _model_with_weights(cfg, args.weights)
    with threadpool_limits(args.threads):
        start = time.perf_counter()
        out = model(clip.data.astype(np.float32))
        elapsed = time.perf_counter() - start
    write_tensor(args.output, out)
    print(f"{'x'.join(map(str, clip.shape))} -> {'x'.join(map(str, out.shape))} "
          f"in {elapsed * 1e3:.1f} ms")
    return EXIT_OK


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def cmd_bench(args):
    from .bench import run_bench

    cfg = load_config(args.config)
    result = run_bench(cfg, args.t_values, reps=args.reps, threads=args.threads, seed=args.seed)
    print(f"# {result.model} on {result.machine}")
    print(result.to_csv(), end="")
    if args.csv:
        _write(args.csv, result.to_csv())
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradsuite import failures, run_suite

    streaming = load_config(args.config).streaming if args.config else False
    reports = run_suite(seed=args.seed, tolerance=args.tolerance, max_entries=args.max_entries,
                        streaming=streaming)
    for name, report in reports.items():
        print(f"{name:<44} {report}")
    bad = failures(reports)
    if bad:
        print("FAILED: " + ", ".join(bad))
        return EXIT_FAIL
    print(f"all {len(reports)} checks passed at tolerance {args.tolerance:g}")
    return EXIT_OK


def cmd_overfit(args):
    from .train import overfit, overfit_config, trace_csv

    cfg = load_config(args.config) if args.config else overfit_config(args.streaming, args.seed)
    log = (lambda r: print(f"step {r.step:4d} loss {r.loss:.6f} acc {r.accuracy:.3f}")) \
        if args.verbose else None
    try:
        with threadpool_limits(args.threads):
            trace = overfit(cfg, steps=args.steps, classes=args.classes, lr=args.lr,
                            seed=args.seed, log=log)
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    text = trace_csv(trace)
    if args.csv:
        _write(args.csv, text)
    last = trace[-1]
    print(f"{cfg.kind}: {len(trace)} steps, final loss {last.loss:.6f}, accuracy {last.accuracy:.3f}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="swinlip", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("describe", help="per-layer parameter and MAC report")
    d.add_argument("--config")
    d.add_argument("--frames", type=int, help="override clip length T")
    d.add_argument("--csv")
    d.set_defaults(func=cmd_describe)

    i = sub.add_parser("init", help="write freshly initialised weights")
    i.add_argument("--config")
    i.add_argument("--seed", type=int)
    i.add_argument("--output", required=True)
    i.set_defaults(func=cmd_init)

    f = sub.add_parser("forward", help="encode a T x H x W x 1 SLT1 clip")
    f.add_argument("--config")
    f.add_argument("--weights")
    f.add_argument("--input", required=True)
    f.add_argument("--output", required=True)
    f.add_argument("--threads", type=int, default=1)
    f.set_defaults(func=cmd_forward)

    b = sub.add_parser("bench", help="forward latency over clip lengths")
    b.add_argument("--config")
    b.add_argument("--t-values", type=_int_list, default=[29, 58, 116, 232])
    b.add_argument("--reps", type=int, default=5)
    b.add_argument("--threads", type=int, default=1)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--csv")
    b.set_defaults(func=cmd_bench)

    g = sub.add_parser("gradcheck", help="finite-difference check of every op and a reduced model")
    g.add_argument("--config", help="only its streaming flag is used")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tolerance", type=float, default=1e-4)
    g.add_argument("--max-entries", type=int, default=3,
                   help="sampled coordinates per parameter tensor of the reduced model")
    g.set_defaults(func=cmd_gradcheck)

    o = sub.add_parser("overfit", help="memorise the 16-clip synthetic task")
    o.add_argument("--config")
    o.add_argument("--streaming", action="store_true")
    o.add_argument("--steps", type=int, default=200)
    o.add_argument("--classes", type=int, default=2)
    o.add_argument("--lr", type=float, default=0.05)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--threads", type=int, default=1)
    o.add_argument("--csv")
    o.add_argument("--verbose", action="store_true")
    o.set_defaults(func=cmd_overfit)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DimensionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, WeightFileError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
