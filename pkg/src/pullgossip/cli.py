"""Command-line front end.

Configs are flat `key = value` text files (# starts a comment); the key set
is exactly the ExperimentConfig fields, unknown keys are errors, and every
run must get a seed from the file or --seed.  All outputs are data files
(JSON report, CSV trace) intended for external plotting.
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from .engine import ContractError
from .harness import (PROTOCOL_NAMES, ExperimentConfig, TrialBatchReport,
                      calibrate, run_batch, sweep, validate_config,
                      write_report_json, write_trace_csv)

_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_FLOAT_KEYS = {"gamma", "gamma_phase"}


class ConfigError(ValueError):
    pass


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Flat key = value lines into a typed dict; collects every problem."""
    values: dict = {}
    problems: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            continue
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _FIELDS:
            problems.append(f"{source}:{lineno}: unknown key {key!r}")
            continue
        if key in values:
            problems.append(f"{source}:{lineno}: duplicate key {key!r}")
            continue
        ftype = _FIELDS[key].type
        try:
            if key in _FLOAT_KEYS:
                values[key] = float(val)
            elif ftype in ("int", int):
                values[key] = int(val)
            else:
                values[key] = val
        except ValueError:
            problems.append(f"{source}:{lineno}: {key} needs a number, got {val!r}")
    if problems:
        raise ConfigError("; ".join(problems))
    return values


def parse_config(path: str, overrides: dict | None = None) -> ExperimentConfig:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from e
    values = parse_config_text(text, source=path)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    missing = [k for k in ("protocol", "n") if k not in values]
    if "seed" not in values:
        missing.append("seed (set it in the config or pass --seed)")
    if missing:
        raise ConfigError("missing required keys: " + ", ".join(missing))
    cfg = ExperimentConfig(**values)
    bad = validate_config(cfg)
    if bad:
        raise ConfigError("; ".join(bad))
    return cfg


def _fail(category: str, message: str, code: int) -> int:
    print(f"pullgossip: error: {category}: {message}", file=sys.stderr)
    return code


def _write_outputs(report: TrialBatchReport, out_dir: str, stem: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_report_json(report, os.path.join(out_dir, f"{stem}.json"))
    write_trace_csv(report, os.path.join(out_dir, f"trace{stem[6:]}.csv"))


def _summary(report: TrialBatchReport) -> str:
    p50 = "-" if report.p50_rounds is None else f"{report.p50_rounds:.0f}"
    p95 = "-" if report.p95_rounds is None else f"{report.p95_rounds:.0f}"
    return (f"{report.config.protocol}: {len(report.digests)} trials, "
            f"success_rate={report.success_rate:.3f}, p50={p50}, p95={p95} rounds")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pullgossip",
                                 description="Gossip protocol experiment runner")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--max-rounds", type=int, default=None, dest="max_rounds")

    run_p = sub.add_parser("run", help="run one trial batch")
    common(run_p)
    run_p.add_argument("--out", default="out", help="output directory")
    run_p.add_argument("--require-convergence", action="store_true",
                       help="exit 2 unless every trial converged")

    sweep_p = sub.add_parser("sweep", help="run one batch per axis value")
    common(sweep_p)
    sweep_p.add_argument("--out", default="out")
    sweep_p.add_argument("--axis", required=True)
    sweep_p.add_argument("--values", required=True,
                         help="comma-separated axis values")
    sweep_p.add_argument("--require-convergence", action="store_true")

    cal_p = sub.add_parser("calibrate", help="print an empirical round threshold")
    common(cal_p)
    cal_p.add_argument("--quantile", type=float, default=0.95)

    sub.add_parser("list-protocols", help="print runnable protocol names")

    val_p = sub.add_parser("validate-config", help="check a config file")
    val_p.add_argument("--config", required=True)
    val_p.add_argument("--seed", type=int, default=None)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "list-protocols":
        for name in PROTOCOL_NAMES:
            print(name)
        return 0

    overrides = {"seed": args.seed}
    if args.command != "validate-config":
        overrides["threads"] = args.threads
        overrides["max_rounds"] = args.max_rounds

    try:
        cfg = parse_config(args.config, overrides)
    except ConfigError as e:
        return _fail("config", str(e), 1)

    if args.command == "validate-config":
        print(f"ok: {cfg.protocol}, n={cfg.n}, trials={cfg.trials}")
        return 0

    try:
        if args.command == "run":
            report = run_batch(cfg)
            _write_outputs(report, args.out, "report")
            print(_summary(report))
            if args.require_convergence and report.success_rate < 1.0:
                return _fail("convergence",
                             f"success_rate={report.success_rate:.3f} < 1.0", 2)
            return 0

        if args.command == "sweep":
            values = [v for v in args.values.split(",") if v]
            reports = sweep(cfg, args.axis, values)
            all_converged = True
            for v, report in zip(values, reports):
                _write_outputs(report, args.out, f"report_{args.axis}_{v}")
                print(f"{args.axis}={v}  {_summary(report)}")
                all_converged &= report.success_rate == 1.0
            if args.require_convergence and not all_converged:
                return _fail("convergence", "not every batch fully converged", 2)
            return 0

        if args.command == "calibrate":
            threshold = calibrate(cfg, args.quantile)
            print(threshold)
            return 0
    except ContractError as e:
        return _fail("config", str(e), 1)

    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
