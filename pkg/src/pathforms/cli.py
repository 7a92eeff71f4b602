"""Command line driver.

Subcommands: ``run`` executes a suite and writes report files, ``list``
prints the experiment catalog, ``report`` re-renders a previously
written JSON report.  Configuration is a single JSON document; command
line flags override individual fields.  Exit codes: 0 all verdicts
pass, 1 at least one verdict failed, 2 usage or IO error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .errors import PathformsError
from .experiments import (
    SUITES,
    config_from_dict,
    emit_report,
    list_experiments,
    report_from_dict,
    run_suite,
)

ENV_OUT = "PATHFORMS_OUT"


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="pathforms",
        description="Run numerical checks of the damped-transport form "
        "calculus on Brownian path spaces.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute an experiment suite")
    run.add_argument("--config", metavar="PATH", help="JSON config document")
    run.add_argument("--manifold", help="manifold label, e.g. sphere(2)")
    run.add_argument("--steps", type=int, help="grid steps N")
    run.add_argument("--samples", type=int, help="Monte Carlo sample count")
    run.add_argument("--seed", type=int, help="base seed")
    run.add_argument("--horizon", type=float, help="time horizon T")
    run.add_argument(
        "--suite",
        action="append",
        metavar="ID",
        help="experiment id or suite alias; repeatable, commas allowed",
    )
    run.add_argument("--out", metavar="DIR", help="output directory")
    run.add_argument("--plots", action="store_true", help="write plot files")
    run.add_argument("--workers", type=int, help="thread count")
    run.add_argument(
        "--configs", type=int, help="randomized configurations per experiment"
    )
    run.add_argument(
        "--order-check",
        action="store_true",
        help="rerun each experiment at 2N and check residual ratios",
    )

    lst = sub.add_parser("list", help="print the experiment catalog")
    lst.add_argument(
        "--suites", action="store_true", help="also print suite aliases"
    )

    rep = sub.add_parser("report", help="re-render a JSON report")
    rep.add_argument("json_path", metavar="REPORT_JSON")
    rep.add_argument("--out", metavar="DIR", help="output directory")
    rep.add_argument("--plots", action="store_true", help="write plot files")
    return p


def _merged_config(args) -> dict:
    doc: dict = {}
    if args.config:
        with open(args.config) as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise PathformsError("config document must be a JSON object")
        doc.update(loaded)
    if args.manifold is not None:
        doc["manifold"] = args.manifold
    if args.steps is not None:
        doc["n_steps"] = args.steps
    if args.samples is not None:
        doc["n_samples"] = args.samples
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.horizon is not None:
        doc["horizon"] = args.horizon
    if args.suite:
        ids = []
        for chunk in args.suite:
            ids.extend(s for s in chunk.split(",") if s)
        doc["experiments"] = tuple(ids)
    if args.out is not None:
        doc["out"] = args.out
    if args.plots:
        doc["plots"] = True
    if args.workers is not None:
        doc["workers"] = args.workers
    if args.configs is not None:
        doc["n_configs"] = args.configs
    if args.order_check:
        doc["order_check"] = True
    return doc


def _out_dir(configured: str | None) -> str:
    return configured or os.environ.get(ENV_OUT) or os.getcwd()


def _print_rows(rows, stream) -> None:
    for r in rows:
        mark = "PASS" if r.verdict else "FAIL"
        print(
            f"{mark} {r.experiment:34s} est={r.estimate:+.6e} "
            f"se={r.std_error:.3e} tol={r.tolerance:.3e}",
            file=stream,
        )


def _cmd_run(args) -> int:
    cfg = config_from_dict(_merged_config(args))
    report = run_suite(cfg)
    out_dir = _out_dir(cfg.out)
    paths = emit_report(report, out_dir, plots=cfg.plots)
    _print_rows(report.rows, sys.stdout)
    n_pass = sum(1 for r in report.rows if r.verdict)
    state = "PASS" if report.passed else "FAIL"
    print(f"suite: {state} ({n_pass}/{len(report.rows)} experiments)")
    print(f"report: {paths['csv']}")
    return 0 if report.passed else 1


def _cmd_list(args) -> int:
    catalog = list_experiments()
    for row in catalog:
        print(f"{row['id']:34s} [{row['kind']:4s}] {row['summary']}")
    print(f"{len(catalog)} experiments")
    if args.suites:
        for name, members in SUITES.items():
            print(f"suite {name}: {', '.join(members)}")
    return 0


def _cmd_report(args) -> int:
    with open(args.json_path) as fh:
        report = report_from_dict(json.load(fh))
    emit_report(report, _out_dir(args.out), plots=args.plots)
    _print_rows(report.rows, sys.stdout)
    state = "PASS" if report.passed else "FAIL"
    print(f"suite: {state}")
    return 0 if report.passed else 1


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "list":
            return _cmd_list(args)
        return _cmd_report(args)
    except PathformsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
