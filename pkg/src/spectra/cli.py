"""Command-line entry point wiring all modules together.

Exit codes: 0 success, 1 usage/config error, 2 data/format error,
3 numeric error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import bench, data, quant, serialize, train
from .errors import (ConfigError, DataError, FormatError, NumericError,
                     ShapeError, UsageError)
from .model import SpectraConfig, build_model, count_costs, forward
from .tensor import Rng

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

_TRAIN_KEYS = {f.name for f in dataclasses.fields(train.TrainConfig)}
_MODEL_KEYS = {f.name for f in dataclasses.fields(SpectraConfig)}


class _Parser(argparse.ArgumentParser):
    """argparse that exits with the documented usage code (1, not 2)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def parse_config_file(path: str) -> tuple[SpectraConfig, train.TrainConfig]:
    """Flat key=value text holding SpectraConfig and TrainConfig fields.

    A shared 'seed' key applies to both configs; unknown keys are errors.
    """
    model_kv: dict = {}
    train_kv: dict = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from None
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        known = False
        if key in _MODEL_KEYS:
            model_kv[key] = value
            known = True
        if key in _TRAIN_KEYS:
            train_kv[key] = value
            known = True
        if not known:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")

    def _coerce(cls, kv):
        out = {}
        for f in dataclasses.fields(cls):
            if f.name not in kv:
                continue
            raw = kv[f.name]
            if f.type in ("bool", bool):
                if raw.lower() not in ("true", "false", "0", "1"):
                    raise ConfigError(f"{f.name}: expected a boolean, got {raw!r}")
                out[f.name] = raw.lower() in ("true", "1")
            elif f.type in ("int", int):
                out[f.name] = int(raw)
            else:
                out[f.name] = float(raw)
        return cls(**out)

    return _coerce(SpectraConfig, model_kv), _coerce(train.TrainConfig, train_kv)


def _print_config(label: str, cfg) -> None:
    print(f"[{label}] " + " ".join(
        f"{f.name}={getattr(cfg, f.name)}" for f in dataclasses.fields(cfg)))


def cmd_synth_data(args) -> int:
    train_rec, test_rec = data.synth_dataset(args.classes, args.seconds, args.seed)
    os.makedirs(args.out, exist_ok=True)
    data.save_recording_csv(train_rec, os.path.join(args.out, "train.csv"))
    data.save_recording_csv(test_rec, os.path.join(args.out, "test.csv"))
    print(f"wrote {args.out}/train.csv and {args.out}/test.csv "
          f"({args.classes} classes, {args.seconds} s/class, seed {args.seed})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg, tc = parse_config_file(args.config)
    _print_config("model", cfg)
    _print_config("train", tc)
    train_batch, test_batch = data.load_split(args.data, T=cfg.T)
    if train_batch.windows.shape[2] != cfg.C:
        raise DataError(f"data has C={train_batch.windows.shape[2]} channels, "
                        f"config says C={cfg.C}")
    model = build_model(cfg)
    _, history = train.train_epochs(
        model, train_batch.windows, train_batch.labels, tc,
        eval_windows=test_batch.windows, eval_labels=test_batch.labels,
        verbose=True)
    serialize.save_model(model, args.out)
    if args.history:
        train.write_history_csv(history, args.history)
    print(f"model written to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = serialize.load_model(args.model)
    _print_config("model", model.config)
    _, test_batch = data.load_split(args.data, T=model.config.T)
    metrics = train.evaluate(model, test_batch.windows, test_batch.labels)
    print(json.dumps(metrics.as_dict(), indent=2))
    return EXIT_OK


def cmd_infer(args) -> int:
    model = serialize.load_model(args.model)
    cfg = model.config
    _print_config("model", cfg)
    rec = data.load_recording_csv(args.window)
    if len(rec.samples) < cfg.T:
        raise DataError(f"window file has {len(rec.samples)} samples, need {cfg.T}")
    window = rec.samples[: cfg.T]
    probs = forward(model, window[None])[0]
    print(json.dumps({
        "probabilities": probs.tolist(),
        "argmax": int(np.argmax(probs)),
    }, indent=2))
    return EXIT_OK


def cmd_quantize(args) -> int:
    model = serialize.load_model(args.model)
    _print_config("model", model.config)
    train_batch, _ = data.load_split(args.calib, T=model.config.T)
    windows = train_batch.windows[: args.max_windows]
    qmodel = quant.calibrate(model, windows, mode=args.mode)
    quant.save_quantized(qmodel, args.out)
    print(f"quantized model ({args.mode}, {windows.shape[0]} calibration windows) "
          f"written to {args.out}")
    return EXIT_OK


def cmd_count(args) -> int:
    cfg, _ = parse_config_file(args.config)
    _print_config("model", cfg)
    print(json.dumps(count_costs(cfg).as_dict(), indent=2))
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.int8:
        qmodel = quant.load_quantized(args.model)
        target, cfg = qmodel, qmodel.base.config
    else:
        model = serialize.load_model(args.model)
        target, cfg = model, model.config
    _print_config("model", cfg)
    window = Rng(0).normal((cfg.T, cfg.C))
    report = bench.bench_inference(target, window, warmup=args.warmup,
                                   iters=args.iters)
    bench.emit_report(report, args.format, args.out)
    print(f"median latency {report.total_ms[1]:.3f} ms "
          f"({report.stft_ms[1]:.3f} front-end + {report.nn_ms[1]:.3f} backbone), "
          f"{report.samples_per_s:.1f} samples/s -> {args.out}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="spectra",
                     description="Spectral-temporal activity recognition engine")
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("synth-data", formatter_class=fmt,
                       help="generate a synthetic rhythmic-activity dataset")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--seconds", type=float, default=60.0,
                   help="seconds of signal per class")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", formatter_class=fmt, help="train a model")
    p.add_argument("--data", required=True, help="directory with train.csv/test.csv")
    p.add_argument("--config", required=True, help="key=value config file")
    p.add_argument("--out", required=True, help="output model file (.spct)")
    p.add_argument("--history", default=None, help="optional history CSV path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", formatter_class=fmt, help="evaluate a model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", formatter_class=fmt,
                       help="classify a single window from a CSV file")
    p.add_argument("--model", required=True)
    p.add_argument("--window", required=True, help="CSV with at least T rows")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("quantize", formatter_class=fmt,
                       help="post-training INT8 quantization")
    p.add_argument("--model", required=True)
    p.add_argument("--calib", required=True,
                   help="directory with train.csv used for calibration")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["full", "weights_only"], default="full")
    p.add_argument("--max-windows", type=int, default=200)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("count", formatter_class=fmt,
                       help="parameter and MAC counts for a config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("bench", formatter_class=fmt,
                       help="latency/throughput benchmark")
    p.add_argument("--model", required=True)
    p.add_argument("--int8", action="store_true",
                   help="model file is a quantized (version 2) container")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--out", required=True)
    p.add_argument("--warmup", type=int, default=50)
    p.add_argument("--iters", type=int, default=500)
    p.set_defaults(func=cmd_bench)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FormatError, ShapeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
