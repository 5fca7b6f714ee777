"""Command line interface: inspect, fit, bench and simulate.

Exit codes: 0 success, 1 invalid config or input, 2 some cells failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench, simulate
from .config import ExperimentPlan, load_plan
from .errors import ConfigError, ForecastBenchError
from .ingest import adf_test, load_csv, rolling_stats, save_csv
from .metrics import METRIC_NAMES, evaluate_all

EXIT_OK, EXIT_INVALID, EXIT_PARTIAL = 0, 1, 2

logger = logging.getLogger("forecastbench")


class _Parser(argparse.ArgumentParser):
    # Usage errors share the invalid-input exit code; 2 is reserved for partial failures.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _fractions(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="forecastbench", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("inspect", help="load summary, rolling statistics and ADF verdict")
    p.add_argument("csv")
    p.add_argument("--value-column", default="Close")
    p.add_argument("--date-column", default="Date")
    p.add_argument("--window", type=int, default=10, help="rolling window (default 10)")
    p.add_argument("--max-lag", type=int, default=None)

    for name, text in (("fit", "fit one model and print diagnostics"),
                       ("bench", "run the full plan and write reports")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config")
        p.add_argument("--seed", type=int)
        p.add_argument("--horizon", type=int)
        p.add_argument("--fractions", type=_fractions, help="comma-separated, e.g. 1,0.5,0.25")
        p.add_argument("--output-dir")
        if name == "fit":
            p.add_argument("--model", help="model name from the config (default: the first)")
        else:
            p.add_argument("--jobs", type=int, help="worker processes")

    p = sub.add_parser("simulate", help="write a seeded synthetic series to CSV")
    p.add_argument("kind", choices=simulate.KINDS)
    p.add_argument("out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=None, help="length (default depends on kind)")
    return parser


def _plan(args) -> ExperimentPlan:
    plan = load_plan(args.config)
    return plan.with_overrides(seed=args.seed, horizon=args.horizon, fractions=args.fractions,
                               output_dir=args.output_dir, jobs=getattr(args, "jobs", None))


def cmd_inspect(args) -> int:
    series, summary = load_csv(args.csv, value_column=args.value_column, date_column=args.date_column,
                               return_summary=True)
    print("load summary:", json.dumps(summary.__dict__))
    mean, std = rolling_stats(series, args.window)
    print(f"rolling mean (window {args.window}): first {mean.values[0]:.6g}, last {mean.values[-1]:.6g}, "
          f"range [{mean.values.min():.6g}, {mean.values.max():.6g}]")
    print(f"rolling std  (window {args.window}): first {std.values[0]:.6g}, last {std.values[-1]:.6g}, "
          f"median {np.median(std.values):.6g}")
    report = adf_test(series, max_lag=args.max_lag, rolling_window=None)
    crit = ", ".join(f"{int(k * 100)}%: {v}" for k, v in sorted(report.critical_values.items()))
    print(f"ADF statistic {report.adf_statistic:.4f} (lag {report.lag_order}, nobs {report.nobs}; critical {crit})")
    print(f"ADF verdict: {report.verdict}")
    return EXIT_OK


def _select_model(plan: ExperimentPlan, name: str | None):
    if name is None:
        return plan.models[0]
    for spec in plan.models:
        if spec.name == name:
            return spec
    raise ConfigError("--model", f"no model named {name!r} (have {', '.join(m.name for m in plan.models)})")


def _print_diagnostics(fitted) -> None:
    if hasattr(fitted, "order"):
        o, p = fitted.order, fitted.params
        print(f"order: (p,d,q)=({o.p},{o.d},{o.q}) (P,D,Q)_m=({o.P},{o.D},{o.Q})_{o.m}")
        for label, arr in (("phi", p.phi), ("theta", p.theta), ("Phi", p.Phi), ("Theta", p.Theta), ("beta", p.beta)):
            if np.size(arr):
                print(f"{label}: {np.array2string(np.asarray(arr), precision=5)}")
        if fitted.with_intercept:
            print(f"intercept: {p.intercept:.6g}")
        print(f"sigma2: {p.sigma2:.6g}  aic: {fitted.aic:.6g}  bic: {fitted.bic:.6g}  n_used: {fitted.n_used}")
        print(f"converged: {fitted.converged}  invertible: {fitted.invertible}")
        print("residuals:", json.dumps({k: round(float(v), 6) for k, v in fitted.residual_summary().items()}))
    else:
        history = fitted.loss_history
        print(f"epochs: {len(history)}  first loss: {history[0]:.6g}")
        print(f"final loss: {fitted.final_loss:.6g}")


def cmd_fit(args) -> int:
    plan = _plan(args)
    spec = _select_model(plan, args.model)
    plan = replace(plan, models=(spec,), fractions=plan.fractions[:1])
    task = bench.build_tasks(plan, bench.load_dataset(plan))[0]
    print(f"model: {spec.name} ({spec.kind}), fraction {task.fraction:g}, {len(task.train)} training points")
    try:
        fitted, fc, windowed, _ = bench.execute(task)
    except (ForecastBenchError, ValueError, ArithmeticError) as exc:
        print(f"fit failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    _print_diagnostics(fitted)
    actual = task.test.values[:task.horizon]
    report = evaluate_all(actual, fc.point, plan.mape_denominator, strict=False)
    print(f"direct {task.horizon}-step metrics: "
          + "  ".join(f"{m}={getattr(report, m):.6g}" for m in METRIC_NAMES))
    if windowed is not None:
        report = evaluate_all(actual, windowed, plan.mape_denominator, strict=False)
        print("windowed metrics: " + "  ".join(f"{m}={getattr(report, m):.6g}" for m in METRIC_NAMES))
    return EXIT_OK


def cmd_bench(args) -> int:
    plan = _plan(args)
    result = bench.run(plan)
    out = Path(plan.output_dir)
    bench.emit_reports(result, out)
    for r in result.rows:
        status = f"mape={r.report.mape:.4g} rmse={r.report.rmse:.6g}" if r.ok else f"FAILED {r.error}"
        print(f"{r.model:>12s} {r.fraction:<5g} {r.seconds:8.2f}s  {status}")
    print(f"reports written to {out}")
    if result.failed:
        print(f"{len(result.failed)} of {len(result.rows)} cells failed", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.n is not None and args.n < 2:
        raise ConfigError("--n", "must be at least 2")
    series = simulate.generate(args.kind, n=args.n, seed=args.seed)
    save_csv(series, args.out)
    print(f"wrote {len(series)} rows of {args.kind} (seed {args.seed}) to {args.out}")
    return EXIT_OK


COMMANDS = {"inspect": cmd_inspect, "fit": cmd_fit, "bench": cmd_bench, "simulate": cmd_simulate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ForecastBenchError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
