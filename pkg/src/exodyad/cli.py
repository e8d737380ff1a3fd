"""Command-line entry point: ``exodyad simulate | verify | report``."""

from __future__ import annotations

import argparse
import io
import logging
import os
import sys
import time
from pathlib import Path

from . import checks, config, metrics
from .simulator import SimulationAbort, run_dyad, write_atomic

log = logging.getLogger("exodyad")


def _setup_logging():
    level = os.environ.get("EXO_DYAD_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _fmt(v):
    return "-" if v is None else f"{v:.6f}"


def format_report(logs, fmt="table") -> str:
    rows = []
    for lg in logs:
        for user, rep in metrics.condition_report(lg).items():
            rows.append((rep.condition, user, rep.total, rep.bias, rep.random, len(rep.per_trial)))
    buf = io.StringIO()
    if fmt == "csv":
        buf.write("condition,user,total,bias,random,trials\n")
        for c, u, t, b, r, n in rows:
            buf.write(f"{c},{u},{t!r},{'' if b is None else repr(b)},{'' if r is None else repr(r)},{n}\n")
        buf.write("\nlog,user,variable,bin_lo,bin_hi,count\n")
        for lg in logs:
            for u, hists in metrics.distributions(lg).items():
                for name, (counts, edges) in hists.items():
                    for k, cnt in enumerate(counts):
                        buf.write(f"{lg.condition},{u},{name},{edges[k]!r},{edges[k + 1]!r},{int(cnt)}\n")
        return buf.getvalue()

    buf.write(f"{'condition':<16}{'user':<6}{'total':>11}{'bias':>11}{'random':>11}{'trials':>8}\n")
    for c, u, t, b, r, n in rows:
        buf.write(f"{c:<16}{u:<6}{_fmt(t):>11}{_fmt(b):>11}{_fmt(r):>11}{n:>8}\n")
    for lg in logs:
        for u, hists in metrics.distributions(lg).items():
            for name, (counts, edges) in hists.items():
                buf.write(f"\n{lg.condition} {u} {name} [{edges[0]:.2f}, {edges[-1]:.2f}] n={int(counts.sum())}\n")
                peak = max(int(counts.max()), 1)
                for k, cnt in enumerate(counts):
                    bar = "#" * int(round(40 * cnt / peak))
                    buf.write(f"  {edges[k]:7.3f} {int(cnt):8d} {bar}\n")
    return buf.getvalue()


def cmd_simulate(args) -> int:
    try:
        doc = config.load(args.config)
        if args.seed is not None:
            doc["seed"] = args.seed
            doc = config.normalize(doc)
        cfg = config.build(doc)
    except config.ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out or ".")
    csv_path = out / doc["output"]["csv"]
    rep_path = out / doc["output"]["report"]
    t0 = time.perf_counter()
    try:
        dlog = run_dyad(cfg, progress=lambda k, n: log.info("tick %d / %d", k, n))
    except SimulationAbort as exc:
        if exc.log is not None:
            exc.log.write_csv(csv_path.with_suffix(".partial.csv"))
        print(f"simulation aborted: {exc}", file=sys.stderr)
        return 3
    dlog.write_csv(csv_path)
    log.info("simulated %d ticks in %.1f s", dlog.n, time.perf_counter() - t0)
    write_atomic(rep_path, format_report([metrics.read_log(csv_path)]))
    print(f"wrote {csv_path} and {rep_path}")
    return 0


def cmd_verify(args) -> int:
    results = checks.run_all(echo=print)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} properties passed")
    return 1 if failed else 0


def cmd_report(args) -> int:
    try:
        logs = [metrics.read_log(p) for p in args.logs]
    except (OSError, metrics.SchemaError) as exc:
        print(f"cannot read log: {exc}", file=sys.stderr)
        return 2
    try:
        text = format_report(logs, args.format)
    except ValueError as exc:
        print(f"report failed: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="exodyad", description="Coupled exoskeleton dyad simulator.")
    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", help="run a scenario and write the tick log and a metrics report")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="output directory (default: current)")
    s.set_defaults(func=cmd_simulate)
    v = sub.add_parser("verify", help="run the invariant and oracle checks")
    v.set_defaults(func=cmd_verify)
    r = sub.add_parser("report", help="compare tracking error across logs")
    r.add_argument("logs", nargs="+")
    r.add_argument("--format", choices=("csv", "table"), default="table")
    r.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
