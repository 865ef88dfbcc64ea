"""Command line entry point: ``run``, ``pair`` and ``export-trace``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import ExperimentConfig, default_out_dir, load_config
from .diagnostics import warmup_curve_shift
from .errors import CheckpointError, ConfigError, LneditError, NumericalError, TraceError
from .experiment import RunReport, run_experiment
from .io import save_checkpoint, write_json, write_steps_csv, write_trace

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def _load(path, seed: Optional[int], overrides: Sequence[str]) -> ExperimentConfig:
    extra = list(overrides)
    if seed is not None:
        extra.append(f"seed={seed}")
    return load_config(path, extra)


def _out_dir(flag: Optional[str], cfg: Optional[ExperimentConfig] = None) -> Path:
    out = flag or (cfg.out if cfg is not None else "") or default_out_dir()
    if not out:
        raise ConfigError("no output directory: pass --out, set 'out' in the config, "
                          "or set LNEDIT_OUT_DIR", key="out")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_run(report: RunReport, out: Path) -> None:
    write_steps_csv(report.records, out / "steps.csv")
    write_json(report.summary, out / "summary.json")
    cfg = report.config
    if cfg.save_checkpoint:
        save_checkpoint(report.final_state, out / "state.json")
    if cfg.save_deltas:
        shape = (cfg.d, cfg.d_h)
        stacked = np.stack([np.full(shape, np.nan) if d is None else d for d in report.deltas])
        np.save(out / "deltas.npy", stacked)


def cmd_run(args) -> int:
    cfg = _load(args.config, args.seed, args.override)
    out = _out_dir(args.out, cfg)
    report = run_experiment(cfg)
    write_run(report, out)
    print(f"wrote {len(report.records)} steps to {out}")
    return 0


def cmd_pair(args) -> int:
    warm_cfg = _load(args.warm, args.seed, args.override)
    cold_cfg = _load(args.cold, args.seed, args.override)
    out = _out_dir(args.out)
    if warm_cfg.target_signature() != cold_cfg.target_signature():
        raise ConfigError("warm and cold configs differ in their target-phase settings")
    warm = run_experiment(warm_cfg)
    cold = run_experiment(cold_cfg)
    shift = warmup_curve_shift(warm, cold)
    for name, report in (("warm", warm), ("cold", cold)):
        sub = out / name
        sub.mkdir(exist_ok=True)
        write_run(report, sub)
    median = shift.median_ratio if np.isfinite(shift.median_ratio) else None
    write_json({
        "warm": warm.summary,
        "cold": cold.summary,
        "curve_shift": {
            "fraction_warm_le_cold": shift.fraction_le,
            "median_ratio_warm_vs_shifted_cold": median,
            "r": shift.r,
            "target_steps": shift.steps,
        },
    }, out / "summary.json")
    print(f"curve shift: fraction {shift.fraction_le:.3f}, median ratio {median}")
    return 0


def cmd_export_trace(args) -> int:
    cfg = _load(args.config, args.seed, args.override)
    if cfg.trace_path is not None:
        raise ConfigError("export-trace needs a synthetic stream", key="stream")
    captured = []
    run_experiment(cfg, on_batch=lambda phase, step, batch: captured.append((phase, step, batch)))
    steps = [(step, batch) for phase, step, batch in captured if phase == "target"]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    count = write_trace(steps, out, cfg.d, cfg.d_h)
    print(f"wrote {count} target steps to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lnedit", description="Lifelong-normalization editing experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_flags):
        for flag in config_flags:
            p.add_argument(flag, required=True, help="config file (key = value lines)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")

    p = sub.add_parser("run", help="run one experiment")
    common(p, ["--config"])
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("pair", help="warm/cold curve-shift comparison")
    common(p, ["--warm", "--cold"])
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(func=cmd_pair)

    p = sub.add_parser("export-trace", help="write a synthetic run's target batches as a trace CSV")
    common(p, ["--config"])
    p.add_argument("--out", required=True, help="trace CSV path")
    p.set_defaults(func=cmd_export_trace)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (CheckpointError, TraceError, OSError) as exc:
        print(f"input/output error: {exc}", file=sys.stderr)
        return EXIT_IO
    except LneditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
