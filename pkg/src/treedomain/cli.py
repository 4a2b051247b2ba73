"""Command line interface.

Subcommands: gen (build + distribute + dump), bench (refinement
benchmark with CSV and optional figures), fuzz (randomized consistency
runs), check (verify a dump file), tables (communication pattern CSVs),
report (render figures from bench CSVs).

Exit codes: 0 pass, 1 consistency violation or deadlock, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import harness, schedule
from .errors import ConfigurationError, DeadlockError
from .spacetree import DomainSpec, RefinementFactor


def _add_domain_args(parser, depth_default=2):
    parser.add_argument("--factor", default="2,2,2",
                        help="children per axis, e.g. 2,2,2")
    parser.add_argument("--depth", type=int, default=depth_default,
                        help="initial uniform refinement depth")
    parser.add_argument("--max-depth", type=int, default=None)
    parser.add_argument("--cells", type=int, default=8,
                        help="cells per grid (payload sizing only)")


def _spec_from(args, fallback_max_depth):
    factor = RefinementFactor.parse(args.factor)
    max_depth = args.max_depth if args.max_depth is not None else fallback_max_depth
    return DomainSpec(factor=factor, max_depth=max_depth,
                      cells_per_grid=args.cells)


def _write(path, text):
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def cmd_gen(args) -> int:
    spec = _spec_from(args, args.depth)
    topos = harness.initial_distribute(spec, args.depth, args.ranks, args.scheme)
    _write(args.out, harness.dump_topologies(spec, topos))
    return 0


def cmd_check(args) -> int:
    with open(args.dumps) as fh:
        report = harness.check_consistency(fh.read())
    if report.ok:
        print("consistency check passed")
        return 0
    for violation in report.violations:
        print(f"violation: {violation}")
    return 1


def cmd_bench(args) -> int:
    ranks = [int(r) for r in args.ranks.split(",")]
    modes = ("decentral", "central") if args.mode == "both" else (args.mode,)
    results, summary = harness.bench_sweep(
        getattr(args, "from"), args.to, ranks, modes,
        factor=RefinementFactor.parse(args.factor), cells_per_grid=args.cells,
        alpha=args.alpha, beta=args.beta, threaded=args.threads)
    os.makedirs(args.out, exist_ok=True)
    summary_path = os.path.join(args.out, "bench_summary.csv")
    _write(summary_path, summary)
    for res in results:
        stats_path = os.path.join(args.out, f"stats_{res.mode}_r{res.nranks}.csv")
        _write(stats_path, res.stats_csv)
    print(summary, end="")
    if args.plot:
        from . import report as report_mod
        figure_path = os.path.join(args.out, "bench_summary.png")
        report_mod.plot_sweep(summary, figure_path)
        print(f"figure written to {figure_path}")
    print(f"summary written to {summary_path}")
    return 0


def cmd_fuzz(args) -> int:
    result = harness.fuzz(args.seed, args.ops, args.ranks, args.depth,
                          max_depth=args.max_depth,
                          factor=RefinementFactor.parse(args.factor),
                          cells_per_grid=args.cells,
                          artifact_path=args.artifact, threaded=args.threads)
    if result.passed:
        print(f"fuzz passed: seed={args.seed} rounds={result.rounds_completed}")
        return 0
    print(f"fuzz FAILED in round {result.rounds_completed} (seed={args.seed})")
    for violation in result.violations[:20]:
        print(f"violation: {violation}")
    if args.artifact:
        print(f"replay scenario written to {args.artifact}")
    return 1


def cmd_tables(args) -> int:
    ranks = list(range(args.ranks))
    pairs = schedule.all_pairs(ranks)
    regular = schedule.render_stage_table(schedule.regular_stages(pairs), ranks)
    joined = schedule.render_stage_table(schedule.join_stages(pairs), ranks)
    if args.out == "-":
        sys.stdout.write(regular + "\n" + joined)
    else:
        os.makedirs(args.out, exist_ok=True)
        _write(os.path.join(args.out, "pattern_regular.csv"), regular)
        _write(os.path.join(args.out, "pattern_joined.csv"), joined)
        print(f"pattern tables written to {args.out}")
    return 0


def cmd_report(args) -> int:
    from . import report as report_mod
    with open(args.summary) as fh:
        report_mod.plot_sweep(fh.read(), args.out)
    print(f"figure written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treedomain",
        description="decentralized space-tree domain topology simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="build, distribute and dump a domain")
    _add_domain_args(p)
    p.add_argument("--ranks", type=int, required=True)
    p.add_argument("--scheme", choices=("morton", "depthfirst"), default="morton")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("check", help="consistency-check a topology dump")
    p.add_argument("--dumps", required=True)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("bench", help="uniform refinement benchmark")
    p.add_argument("--from", type=int, required=True, dest="from")
    p.add_argument("--to", type=int, required=True)
    p.add_argument("--ranks", required=True, help="comma list, e.g. 4,8,16,32")
    p.add_argument("--mode", choices=("decentral", "central", "both"),
                   default="decentral")
    p.add_argument("--factor", default="2,2,2")
    p.add_argument("--cells", type=int, default=8)
    p.add_argument("--alpha", type=float, default=1e-6,
                   help="modeled per-envelope latency (synthetic)")
    p.add_argument("--beta", type=float, default=1e-9,
                   help="modeled per-byte cost (synthetic)")
    p.add_argument("--threads", action="store_true",
                   help="one executor thread per rank (stress mode)")
    p.add_argument("--plot", action="store_true",
                   help="also render bench_summary.png")
    p.add_argument("--out", default="bench_out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("fuzz", help="randomized consistency fuzzing")
    _add_domain_args(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--ops", type=int, required=True, help="number of rounds")
    p.add_argument("--ranks", type=int, required=True)
    p.add_argument("--artifact", default=None,
                   help="failure scenario output path")
    p.add_argument("--threads", action="store_true",
                   help="one executor thread per rank (stress mode)")
    p.set_defaults(func=cmd_fuzz)

    p = sub.add_parser("tables", help="emit communication pattern CSV tables")
    p.add_argument("--ranks", type=int, default=6)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_tables)

    p = sub.add_parser("report", help="render a bench summary CSV to PNG")
    p.add_argument("--summary", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, OSError) as exc:
        parser.exit(2, f"error: {exc}\n")
    except DeadlockError as exc:
        print(f"deadlock: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
