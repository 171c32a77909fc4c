"""``netinf-sim`` command line.

Exit codes: 0 ok, 1 scenario error, 2 runtime abort, 3 budget regression.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from netinf_mn.errors import IncomparableReportsError, NetInfError, SimulationAbort
from netinf_mn.scenario.parser import POLICIES, ParseError, Scenario, parse_scenario
from netinf_mn.scenario.runner import compare_runs, report_to_json, resolve_seed, run_scenario

EXIT_OK = 0
EXIT_SCENARIO = 1
EXIT_ABORT = 2
EXIT_BUDGET = 3


class _ScenarioFileError(Exception):
    pass


def _load(path: str) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise _ScenarioFileError(f"{path}: {exc.strerror}") from exc
    try:
        return parse_scenario(text)
    except ParseError as exc:
        raise _ScenarioFileError(f"{path}:{exc.line}:{exc.column}: expected {exc.expected}"
                                 + (f", found {exc.found!r}" if exc.found is not None else "")) from exc


def _seed_range(text: str) -> range:
    m = re.fullmatch(r"(\d+)\.\.(\d+)", text)
    if not m:
        raise argparse.ArgumentTypeError("seed range must look like A..B")
    a, b = int(m.group(1)), int(m.group(2))
    if b < a:
        raise argparse.ArgumentTypeError("seed range is empty")
    return range(a, b + 1)


def _budget(text: str) -> tuple[str, float]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError("budget must look like key=N")
    try:
        return key, float(value) if "." in value else int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"budget value {value!r} is not a number") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="netinf-sim", description="NetInf mobile-node scenario simulator")
    sub = ap.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="run one scenario")
    run.add_argument("file")
    run.add_argument("--seed", type=int)
    run.add_argument("--until", type=int)
    run.add_argument("--trace", metavar="PATH")
    run.add_argument("--report", metavar="PATH")
    run.add_argument("--update-policy", choices=POLICIES)
    run.add_argument("--timing", action="store_true", help="record wall time in the report")

    val = sub.add_parser("validate", help="parse and check a scenario")
    val.add_argument("file")

    sweep = sub.add_parser("sweep", help="run one scenario over a range of seeds")
    sweep.add_argument("file")
    sweep.add_argument("--seeds", type=_seed_range, required=True, metavar="A..B")
    sweep.add_argument("--parallel", type=int, default=1, metavar="K")
    sweep.add_argument("--update-policy", choices=POLICIES)
    sweep.add_argument("--out", metavar="DIR", help="write one report per seed here")

    cmp_ = sub.add_parser("compare", help="diff two reports")
    cmp_.add_argument("a")
    cmp_.add_argument("b")
    cmp_.add_argument("--keys", required=True)
    cmp_.add_argument("--budget", type=_budget, action="append", default=[], metavar="key=N")
    return ap


def _cmd_run(args) -> int:
    sc = _load(args.file)
    seed = resolve_seed(args.seed, sc)
    out = run_scenario(sc, seed, name=Path(args.file).stem, policy=args.update_policy, until=args.until,
                       timing=args.timing)
    if args.trace:
        Path(args.trace).write_text(out.trace.text())
    text = out.report_json()
    if args.report:
        Path(args.report).write_text(text)
        g = out.report["global"]
        print(f"{Path(args.file).stem}: seed={seed} ticks={out.report['run']['ticks']} "
              f"events={out.report['run']['event_count']} core_msgs={g['core_msgs']} "
              f"edge_msgs={g['edge_msgs']} data_msgs={g['data_msgs']}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_validate(args) -> int:
    sc = _load(args.file)
    print(f"{args.file}: ok ({len(sc.edge_networks)} edge networks, {len(sc.nodes)} nodes, "
          f"{len(sc.sessions)} sessions, {len(sc.actions)} actions)")
    return EXIT_OK


def _sweep_one(job: tuple) -> tuple[int, Optional[str], Optional[str]]:
    path, seed, policy = job
    sc = parse_scenario(Path(path).read_text())
    try:
        out = run_scenario(sc, seed, name=Path(path).stem, policy=policy)
    except SimulationAbort as exc:
        return seed, None, str(exc)
    return seed, out.report_json(), None


def _cmd_sweep(args) -> int:
    _load(args.file)
    jobs = [(args.file, s, args.update_policy) for s in args.seeds]
    if args.parallel > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    status = EXIT_OK
    out_dir = Path(args.out) if args.out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    for seed, text, err in results:
        if err is not None:
            print(f"seed={seed} abort: {err}")
            status = EXIT_ABORT
            continue
        rep = json.loads(text)
        g = rep["global"]
        print(f"seed={seed} ticks={rep['run']['ticks']} core_msgs={g['core_msgs']} "
              f"edge_msgs={g['edge_msgs']} data_msgs={g['data_msgs']}")
        if out_dir:
            (out_dir / f"{Path(args.file).stem}-seed{seed}.json").write_text(text)
    return status


def _cmd_compare(args) -> int:
    reports = []
    for path in (args.a, args.b):
        try:
            reports.append(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read report {path}: {exc}", file=sys.stderr)
            return EXIT_SCENARIO
    keys = [k for k in args.keys.split(",") if k]
    budgets = dict(args.budget)
    for k in budgets:
        if k not in keys:
            keys.append(k)
    try:
        table = compare_runs(reports[0], reports[1], keys)
    except (IncomparableReportsError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    sys.stdout.write(table.render())
    bad = table.regressions(budgets)
    for key in bad:
        print(f"regression: {key} grew by {table.row(key).delta} (budget {budgets[key]})")
    return EXIT_BUDGET if bad else EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": _cmd_run, "validate": _cmd_validate, "sweep": _cmd_sweep, "compare": _cmd_compare}[args.verb]
    try:
        return handler(args)
    except _ScenarioFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except SimulationAbort as exc:
        print(f"abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except NetInfError as exc:
        print(f"abort: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
