"""Command line entry point: ``marginlab gen|train|verify|sweep|report``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .generators import ConfigError
from .runner import (SUMMARY_HEADER, collect_reports, exit_code, generate_scenario_data, run_scenario,
                     summary_row, sweep, verify_scenario)
from .scenario import load_spec, load_sweep_list


def _print_verdicts(art) -> None:
    for v in art.verdicts:
        line = f"{v.name:<10} {v.status}"
        if v.message:
            line += f"  ({v.message})"
        print(line)
    print(f"report: {art.report}")


def _cmd_gen(args) -> int:
    spec = load_spec(args.spec)
    if args.seed is not None:
        spec = spec.with_seed(args.seed)
    out = generate_scenario_data(spec, args.out)
    print(f"wrote {out / 'dataset.csv'} and {out / 'weights.txt'}")
    return 0


def _cmd_train(args) -> int:
    spec = load_spec(args.spec)
    if args.seed is not None:
        spec = spec.with_seed(args.seed)
    art = run_scenario(spec, args.out)
    _print_verdicts(art)
    return exit_code(art.fail_count)


def _cmd_verify(args) -> int:
    spec = load_spec(args.spec)
    if args.seed is not None:
        spec = spec.with_seed(args.seed)
    art = verify_scenario(spec, args.out)
    _print_verdicts(art)
    return exit_code(art.fail_count)


def _render(rows) -> None:
    print(" ".join(SUMMARY_HEADER))
    for r in rows:
        print(" ".join(x if x != "" else "-" for x in r))


def _cmd_sweep(args) -> int:
    paths = load_sweep_list(args.listfile)
    summary = args.summary or Path(args.listfile).with_suffix(".summary.csv")
    rows = sweep(paths, args.jobs, summary)
    _render(rows)
    print(f"summary: {summary}")
    return exit_code(sum(int(r[5]) for r in rows))


def _cmd_report(args) -> int:
    found = collect_reports(args.dir)
    if not found:
        print(f"no reports under {args.dir}", file=sys.stderr)
        return 1
    rows = [summary_row(rep["header"].get("scenario", d.name), int(rep["header"].get("seed", 0)), rep)
            for d, rep in found]
    rows.sort(key=lambda r: (r[0], int(r[1])))
    _render(rows)
    return exit_code(sum(int(r[5]) for r in rows))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="marginlab", description="Implicit-bias experiments for importance-weighted ERM.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write the scenario's dataset and weights")
    p.add_argument("spec")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=_cmd_gen)

    for name, func, text in (("train", _cmd_train, "run a scenario end to end"),
                             ("verify", _cmd_verify, "re-run checks on an existing run directory")):
        p = sub.add_parser(name, help=text)
        p.add_argument("spec")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path)
        p.set_defaults(func=func)

    p = sub.add_parser("sweep", help="run every scenario listed in a file")
    p.add_argument("listfile")
    p.add_argument("-j", "--jobs", type=int, default=1)
    p.add_argument("--summary", type=Path, help="summary CSV (default: <listfile>.summary.csv)")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("report", help="summarize every report under a directory")
    p.add_argument("dir")
    p.set_defaults(func=_cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, OSError) as exc:
        print(f"marginlab: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
