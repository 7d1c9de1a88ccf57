"""Command-line entry point.

Exit codes: 0 when every check passes, 2 when any check fails, 1 on error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .. import metric, sde
from .config import ConfigError, load_config, prepare
from .experiments import Check, run_experiment
from .fitting import FitImpossibleError, chaos_scaling, fit_rate, plateau_estimate
from .presets import PRESETS, run_preset

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


def _verdict(checks) -> int:
    for c in checks:
        print(c.line())
    return EXIT_PASS if all(c.passed for c in checks) else EXIT_FAIL


def cmd_run(args) -> int:
    res = run_experiment(args.config, args.set, output_dir=args.output_dir, workers=args.workers)
    out = Path(res.config["output_dir"]) / res.config["name"]
    print(f"wrote {out} in {res.elapsed:.1f} s")
    if res.fit is not None:
        print(f"rate {res.fit.rate:.5f} +/- {res.fit.rate_se:.2g} on [{res.fit.t0}, {res.fit.t1}]")
    elif res.fit_error:
        print(f"fit impossible: {res.fit_error}")
    return _verdict(res.checks)


def cmd_metric_dump(args) -> int:
    cfg = load_config(args.config, args.set)
    prep = prepare(cfg)
    if prep.metric is None:
        raise ConfigError("sigma0: the metric needs sigma0 > 0")
    text = metric.dump_csv(prep.metric, prep.W)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_PASS


def _read_series(path: str, column: str | None):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    if column is None:
        column = next((h for h in header[1:] if h.endswith("_mean")), None)
    if column not in header:
        if f"{column}_mean" in header:
            column = f"{column}_mean"
        else:
            raise ConfigError(f"column {column!r} not in {path}; available: {', '.join(header)}")
    return body[:, 0], body[:, header.index(column)], column


def cmd_fit(args) -> int:
    t, v, column = _read_series(args.csv, args.column)
    fit = fit_rate(t, v, args.floor_hint, args.window)
    print(json.dumps({"column": column, **fit.to_dict()}, indent=2))
    return EXIT_PASS


def cmd_scaling(args) -> int:
    configs = sorted(Path(args.config_dir).glob("*.json"))
    if not configs:
        raise ConfigError(f"no *.json configs in {args.config_dir}")
    Ns, levels, ses = [], [], []
    for path in configs:
        res = run_experiment(path, args.set, output_dir=args.output_dir, workers=args.workers)
        series = args.series or res.config["fit"].get("series") or "w2"
        level, se = plateau_estimate(res.record.times, res.record.series[series])
        Ns.append(res.config["N"])
        levels.append(level)
        ses.append(se)
        print(f"{path.name}: N = {res.config['N']} plateau {level:.5g} +/- {se:.2g}")
    rep = chaos_scaling(Ns, levels, ses)
    print(f"slope {rep.slope:.4f} +/- {rep.slope_se:.4f} CI [{rep.ci_low:.4f}, {rep.ci_high:.4f}]")
    ok = abs(rep.slope - args.expected) <= args.tolerance
    return _verdict([Check("chaos_slope", ok,
                           f"{rep.slope:.4f} vs {args.expected} +/- {args.tolerance}")])


def cmd_preset(args) -> int:
    if args.list or not args.name:
        for name, fn in PRESETS.items():
            print(f"{name}: {(fn.__doc__ or '').strip().splitlines()[0]}")
        return EXIT_PASS
    res = run_preset(args.name, args.output_dir, args.workers, args.scale)
    for line in res.lines:
        print(line)
    return _verdict(res.checks)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mkvcn", description="Coupled particle simulations with common noise.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field, e.g. --set N=200 --set coupling.delta=0.01")
        sp.add_argument("--workers", type=int, default=None)
        sp.add_argument("--output-dir", default=None)

    r = sub.add_parser("run", help="run one configured experiment")
    r.add_argument("config")
    common(r)
    r.set_defaults(func=cmd_run)

    m = sub.add_parser("metric", help="distorted metric utilities")
    msub = m.add_subparsers(dest="metric_command", required=True)
    md = msub.add_parser("dump", help="print the metric table as CSV")
    md.add_argument("config")
    md.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    md.add_argument("--out", default=None)
    md.set_defaults(func=cmd_metric_dump)

    f = sub.add_parser("fit", help="fit an exponential rate to a CSV column")
    f.add_argument("csv")
    f.add_argument("--column", default=None)
    f.add_argument("--floor-hint", type=float, default=None)
    f.add_argument("--window", choices=("full", "late"), default="full")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("scaling", help="plateau-versus-N regression over a directory of configs")
    s.add_argument("config_dir")
    s.add_argument("--series", default=None)
    s.add_argument("--expected", type=float, default=-0.5)
    s.add_argument("--tolerance", type=float, default=0.15)
    common(s)
    s.set_defaults(func=cmd_scaling)

    pr = sub.add_parser("preset", help="run a built-in experiment")
    pr.add_argument("name", nargs="?", choices=sorted(PRESETS))
    pr.add_argument("--list", action="store_true")
    pr.add_argument("--scale", type=float, default=1.0,
                    help="shrink particle and realization counts (smoke runs)")
    pr.add_argument("--workers", type=int, default=1)
    pr.add_argument("--output-dir", default="runs")
    pr.set_defaults(func=cmd_preset)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FitImpossibleError, FileNotFoundError, ValueError, KeyError,
            sde.BlowUpError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
