"""Command-line front end: run a config battery, compare runs, list checks."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .harness import (REGISTRY, CompareError, ConfigError, ExperimentConfig,
                      compare_reports, run_config)


def _load_report(path: str) -> dict:
    if os.path.isdir(path):
        path = os.path.join(path, "report.json")
    with open(path) as fh:
        return json.load(fh)


def _cmd_run(args) -> int:
    try:
        cfg = ExperimentConfig.from_json(args.config)
        report = run_config(cfg, out_dir=args.out, only=args.filter or None)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"config error: not valid JSON: {exc}", file=sys.stderr)
        return 2
    for row in report["checks"]:
        mark = "PASS" if row["passed"] else "FAIL"
        line = f"[{mark}] {row['name']} ({row['seconds']:.2f}s)"
        if row.get("message"):
            line += f"  {row['message']}"
        print(line)
    n_fail = sum(not row["passed"] for row in report["checks"])
    print(f"{len(report['checks'])} checks, {n_fail} failed "
          f"({report['seconds']:.1f}s)")
    if args.out:
        print(f"report written to {args.out}")
    return 1 if n_fail else 0


def _cmd_compare(args) -> int:
    try:
        a = _load_report(args.a)
        b = _load_report(args.b)
        out = compare_reports(a, b)
    except CompareError as exc:
        print(f"compare error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"compare error: {exc}", file=sys.stderr)
        return 2
    for row in out["rows"]:
        flag = " REGRESSION" if row["regression"] else ""
        print(f"{row['name']}: {row['a']:.6g} -> {row['b']:.6g} "
              f"(delta {row['delta']:+.3g}){flag}")
    print(f"{out['regressions']} regressions")
    return 1 if out["regressions"] else 0


def _cmd_list(args) -> int:
    width = max(len(name) for name in REGISTRY)
    for name, spec in REGISTRY.items():
        scope = ""
        if spec.dims is not None:
            scope += f" [d={','.join(str(v) for v in sorted(spec.dims))}]"
        if spec.presets is not None:
            scope += f" [{','.join(sorted(spec.presets))}]"
        print(f"{name:<{width}}  stage {spec.stage}  "
              f"{spec.description}{scope}")
    return 0


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(
        prog="divlab",
        description="Monte Carlo and grid verification battery for "
                    "divergence-form diffusions")
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a config's check battery")
    p_run.add_argument("config", help="path to a JSON experiment config")
    p_run.add_argument("--out", default=None,
                       help="directory for report.json and CSV exports")
    p_run.add_argument("--filter", nargs="*", default=None,
                       help="restrict the run to these named checks")
    p_run.set_defaults(fn=_cmd_run)

    p_cmp = sub.add_parser("compare", help="diff two run reports")
    p_cmp.add_argument("a", help="baseline report.json (or its directory)")
    p_cmp.add_argument("b", help="candidate report.json (or its directory)")
    p_cmp.set_defaults(fn=_cmd_compare)

    p_ls = sub.add_parser("list-checks", help="list registered checks")
    p_ls.set_defaults(fn=_cmd_list)

    args = ap.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
