"""Command-line entry point: ``gridattn {softmax,fused,capacity,experiment}``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import bench
from .capacity import DEFAULT_HOST_MEMORY, capacity_reports, format_reports
from .errors import OracleMismatch, SpecError, SramOverflow
from .fused import FusedConfig, fused_attention_weights
from .grid import CoreGrid, GridConfig
from .numerics import oracle_attention_weights, read_matrix, tilize, untilize, write_matrix
from .softmax import ExpCounter, cpu_softmax, grid_softmax


def _config(path):
    return GridConfig.from_file(path) if path else GridConfig()


def cmd_softmax(args):
    z = read_matrix(args.input)
    if args.mode == "grid":
        grid = CoreGrid(_config(args.grid_config), scheduler=args.scheduler)
        out = untilize(grid_softmax(tilize(z), grid))
        ledgers = grid.ledgers()
    else:
        counter = ExpCounter()
        out = cpu_softmax(z, mode=args.mode.split("-", 1)[1], counter=counter)
        ledgers = {bench.HOST: {"exponentiate": counter.count}}
    write_matrix(args.output, out)
    if args.ledger:
        bench.write_ledger_csv(args.ledger, ledgers)
    return 0


def cmd_fused(args):
    q = read_matrix(args.q)
    k = read_matrix(args.k)
    cfg = FusedConfig(d_k=args.dk, subgrid=bench.parse_subgrid(args.subgrid), block_tiles=args.block_tiles)
    grid = CoreGrid(_config(args.grid_config), scheduler=args.scheduler)
    out = untilize(fused_attention_weights(tilize(q), tilize(k), cfg, grid))
    write_matrix(args.output, out)
    if args.ledger:
        bench.write_ledger_csv(args.ledger, grid.ledgers())
    if args.oracle_check:
        ref = read_matrix(args.oracle) if args.oracle else oracle_attention_weights(q, k, args.dk)
        max_abs, row_err = bench.oracle_check(out, ref, what="fused")
        print(f"max abs deviation {max_abs:.6g}, max row-sum error {row_err:.6g}")
    return 0


def cmd_capacity(args):
    print(format_reports(capacity_reports(_config(args.grid_config), args.memory_bytes, args.subgrid_rows)))
    return 0


def cmd_experiment(args):
    spec = bench.ExperimentSpec.from_file(args.spec)
    paths = bench.run_experiment(spec, args.out_dir)
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="gridattn", description="Core-grid attention kernel simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("softmax", help="row softmax of a GFAT matrix")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--mode", choices=["cpu-recompute", "cpu-cache", "grid"], default="grid")
    s.add_argument("--grid-config")
    s.add_argument("--ledger", help="CSV ledger dump")
    s.add_argument("--scheduler", choices=["serial", "threaded"], default="serial")
    s.set_defaults(func=cmd_softmax)

    f = sub.add_parser("fused", help="fused softmax(Q K^T / sqrt(d_k))")
    f.add_argument("--q", required=True)
    f.add_argument("--k", required=True)
    f.add_argument("--output", required=True)
    f.add_argument("--dk", type=int, default=128)
    f.add_argument("--subgrid", default="8x8")
    f.add_argument("--block-tiles", type=int, default=1)
    f.add_argument("--grid-config")
    f.add_argument("--ledger")
    f.add_argument("--scheduler", choices=["serial", "threaded"], default="serial")
    f.add_argument("--oracle-check", action="store_true", help="compare against float64 and print max deviation")
    f.add_argument("--oracle", help="GFAT reference weights (default: computed from Q and K)")
    f.set_defaults(func=cmd_fused)

    c = sub.add_parser("capacity", help="maximum sequence lengths")
    c.add_argument("--grid-config")
    c.add_argument("--memory-bytes", type=int, default=DEFAULT_HOST_MEMORY)
    c.add_argument("--subgrid-rows", type=int)
    c.set_defaults(func=cmd_capacity)

    e = sub.add_parser("experiment", help="run a key=value experiment spec")
    e.add_argument("--spec", required=True)
    e.add_argument("--out-dir", default=".")
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except OracleMismatch as exc:
        print(f"oracle mismatch: {exc}", file=sys.stderr)
        return 3
    except (SramOverflow, SpecError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
