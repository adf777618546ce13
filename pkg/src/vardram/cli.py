"""Command line entry point: run, compare, gen-trace, gen-map."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from .config import PRESETS, TraceSource, load_config, with_overrides
from .errors import VarDramError
from .report import compare, format_compare, load_report, run, write_report
from .trace import KINDS, emit, generate_synthetic
from .variation import default_floorplan, generate_variation_map


def _cmd_run(args) -> int:
    names = args.scenario or [None]
    if names == ["all"]:
        names = list(PRESETS)
    for name in names:
        cfg = load_config(args.config, name, args.set)
        changes = {}
        if args.trace:
            changes["trace"] = TraceSource(file=args.trace)
        if args.seed is not None:
            changes["seed"] = args.seed
        if changes:
            cfg = with_overrides(cfg, **changes)
        report = run(cfg)
        path = write_report(report, args.out)
        e = report["energy"]
        print(
            f"{cfg.name:<10} energy {e['total_nj']:.1f} nJ  latency {report['latency_ns']['mean']:.2f} ns"
            f"  refreshes {report['refresh']['count']}  -> {path}"
        )
    return 0


def _cmd_compare(args) -> int:
    table = compare(load_report(args.baseline), load_report(args.candidate))
    print(json.dumps(table, sort_keys=True, indent=2) if args.json else format_compare(table))
    return 0


def _parse_params(items):
    out = {}
    for item in items or ():
        k, _, v = item.partition("=")
        out[k] = json.loads(v)
    return out


def _cmd_gen_trace(args) -> int:
    cfg = load_config(args.config, None, args.set)
    reqs = generate_synthetic(args.kind, cfg.geometry, args.seed, **_parse_params(args.param))
    emit(reqs, args.out)
    print(f"wrote {len(reqs)} requests to {args.out}")
    return 0


def _cmd_gen_map(args) -> int:
    cfg = load_config(args.config, None, args.set)
    seed = cfg.seed if args.seed is None else args.seed
    v = cfg.variation
    params = dataclasses.replace(v.params, seed=seed)
    plan = default_floorplan(v.grid, cfg.geometry.ranks_per_channel, cfg.geometry.banks_per_rank)
    vmap = generate_variation_map(params, v.grid, plan)
    vmap.save(args.out)
    print(f"wrote {v.grid[0]}x{v.grid[1]} variation map to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vardram", description="Variation-aware DRAM power-gating simulator")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML config (merged over the built-in defaults)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. --set geometry.ranks_per_channel=2")

    r = sub.add_parser("run", help="simulate one or more scenarios")
    common(r)
    r.add_argument("--scenario", action="append",
                   help=f"preset name ({', '.join(PRESETS)}) or 'all'; repeatable")
    r.add_argument("--trace", help="trace file (overrides the config trace source)")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", required=True, help="output directory for <label>.json/.csv")
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("compare", help="percentage deltas of a candidate report vs a baseline")
    c.add_argument("--baseline", required=True)
    c.add_argument("--candidate", required=True)
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=_cmd_compare)

    g = sub.add_parser("gen-trace", help="write a synthetic trace")
    common(g)
    g.add_argument("--kind", required=True, choices=KINDS)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--param", action="append", metavar="NAME=JSON",
                   help="generator parameter, e.g. --param n=500")
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_gen_trace)

    m = sub.add_parser("gen-map", help="write a variation map")
    common(m)
    m.add_argument("--seed", type=int)
    m.add_argument("--out", required=True)
    m.set_defaults(func=_cmd_gen_map)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (VarDramError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
